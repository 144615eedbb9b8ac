from hypertab.services.gradcheck import run_gradcheck


def test_full_pipeline_gradient_passes():
    result = run_gradcheck()
    assert result.success
    assert result.max_relative_error < 1e-5
    assert result.n_params > 1000


def test_pure_hypernetwork_path_passes():
    assert run_gradcheck(alpha=0.0).success


def test_relu_mask_mutation_is_caught():
    result = run_gradcheck(mutation="relu_mask")
    assert not result.success
    assert result.mutation == "relu_mask"
