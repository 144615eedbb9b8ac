"""gradcheck: finite-difference check of the meta-training gradient."""

import argparse
import logging

from hypertab.commands.common import add_run_arguments
from hypertab.errors import GradientCheckError
from hypertab.models import GradcheckRunConfig
from hypertab.services.gradcheck import run_gradcheck

logger = logging.getLogger(__name__)

NAME = "gradcheck"


def add_parser(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(NAME, help="Compare analytic and finite-difference gradients")
    add_run_arguments(parser)
    parser.add_argument("--d-main", dest="d_main", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--k-max", dest="k_max", type=int)
    parser.add_argument("--n-classes", dest="n_classes", type=int)
    parser.add_argument("--n-gen", dest="n_gen", type=int)
    parser.add_argument("--n-grad", dest="n_grad", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--tolerance", type=float)
    parser.add_argument("--mutation", choices=("relu_mask",), help="Corrupt the backward pass (test mode)")
    parser.set_defaults(handler=run, config_model=GradcheckRunConfig)
    return parser


def run(config: GradcheckRunConfig) -> int:
    result = run_gradcheck(
        d_main=config.d_main, hidden=config.hidden, k_max=config.k_max, n_classes=config.n_classes,
        n_gen=config.n_gen, n_grad=config.n_grad, alpha=config.alpha, tau=config.tau,
        tolerance=config.tolerance, mutation=config.mutation, seed=config.seed,
    )
    status = "PASS" if result.success else "FAIL"
    print(f"{status} max_relative_error={result.max_relative_error:.3e} params={result.n_params} "
          f"seconds={result.duration_seconds:.2f}")
    if not result.success:
        raise GradientCheckError(
            f"max relative error {result.max_relative_error:.3e} exceeds tolerance {result.tolerance:g}"
        )
    return 0
