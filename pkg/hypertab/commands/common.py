"""Helpers shared by the command modules: output directories, manifests and checkpoints."""

import argparse
import logging
import platform
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from hypertab import __version__
from hypertab.config import dump_run_config
from hypertab.errors import DataError
from hypertab.services.hypernet import HyperNetwork
from hypertab.services.meta_train import load_checkpoint
from hypertab.services.tabular import TabularTask, list_tasks, load_task

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags every output-producing command accepts."""
    parser.add_argument("--out-dir", dest="out_dir", default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Master seed")


def add_bool_flag(parser: argparse.ArgumentParser, name: str, dest: str, help: str) -> None:
    """--name / --no-name pair; unset leaves the config file or default in charge."""
    group = parser.add_mutually_exclusive_group()
    group.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help)
    group.add_argument(f"--no-{name}", dest=dest, action="store_false", default=None)


def prepare_out_dir(config: BaseModel) -> Optional[Path]:
    out_dir = getattr(config, "out_dir", None)
    if out_dir is None:
        return None
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def render_manifest(command: str, config: BaseModel) -> str:
    """Config echo preceded by comment lines; the result is itself a valid config file."""
    header = [
        f"# command={command}",
        f"# hypertab={__version__}",
        f"# numpy={np.__version__}",
        f"# python={platform.python_version()}",
    ]
    seed = getattr(config, "seed", None)
    if seed is not None:
        header.append(f"# seed={seed}")
    return "\n".join(header) + "\n" + dump_run_config(config)


def write_manifest(command: str, config: BaseModel) -> Optional[Path]:
    out_dir = prepare_out_dir(config)
    if out_dir is None:
        return None
    path = out_dir / MANIFEST_NAME
    path.write_text(render_manifest(command, config))
    logger.debug(f"Wrote manifest {path}")
    return path


def load_all_tasks(directory: str, seed: int = 0) -> List[TabularTask]:
    names = list_tasks(Path(directory))
    if not names:
        raise DataError(f"No tasks found in {directory}")
    return [load_task(Path(directory), name, seed=seed) for name in names]


def load_net(checkpoint: Optional[str]) -> Tuple[Optional[HyperNetwork], dict]:
    """Hypernetwork and the meta-training config echo stored beside it."""
    if checkpoint is None:
        return None, {}
    ckpt = load_checkpoint(Path(checkpoint))
    logger.info(f"Loaded checkpoint {checkpoint} (step {ckpt.step}, {ckpt.net.n_params} parameters)")
    return ckpt.net, ckpt.config
