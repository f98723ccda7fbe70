import pytest

from tiadc_crae.crae import CraeConfig
from tiadc_crae.pipeline import ExperimentConfig, build_dataset, run_training_campaign


def tiny_config(**kw) -> ExperimentConfig:
    base = dict(
        train_records=2,
        test0_records=4,
        test1_records=4,
        test_mismatches_ps=[35.0, 92.0],
        eval_mismatches_ps=[30.0, 60.0, 170.0],
        amplitudes_v=[0.5, 1.0],
        crae=CraeConfig(epochs=3, batch_size=50, test_every=2, test_subset=20),
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg, tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    build_dataset(tiny_cfg, root)
    return root


@pytest.fixture(scope="session")
def tiny_campaign(tiny_cfg, tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    ckpt, report = run_training_campaign(tiny_cfg, tiny_data, out)
    return out, ckpt, report


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(key: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[key] = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[key])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
