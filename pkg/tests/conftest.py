import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fusewake.core import ALERT, DROWSY, US_PER_S, Frames, PhysioBlock, Session, frame_times_us
from fusewake.synth import LEFT_EYE_CENTER, MOUTH_CENTER, RIGHT_EYE_CENTER, eye_points, mouth_points

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_session(
    duration_s=10,
    fps=30.0,
    fs=256.0,
    frame_shift_us=0,
    declared_offset_us=None,
    ear_value=0.3,
    seed=0,
    labels=None,
    session_id="t000",
    subject_id="subj00",
):
    """Small hand-built session: open eyes, sinusoid-plus-noise physio.

    ``frame_shift_us`` moves every frame timestamp (an array shifts frames
    individually); ``declared_offset_us`` writes a sync marker announcing a
    video clock offset.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fps))
    t = frame_times_us(np.arange(n), fps) + np.asarray(frame_shift_us, dtype=np.int64)
    zeros = np.zeros(n)
    ev = np.full(n, ear_value)
    frames = Frames(
        t_us=np.asarray(t, dtype=np.int64),
        left_eye=eye_points(LEFT_EYE_CENTER, ev, zeros, zeros),
        right_eye=eye_points(RIGHT_EYE_CENTER, ev, zeros, zeros),
        mouth=mouth_points(MOUTH_CENTER, np.full(n, 0.3), zeros, zeros),
        valid=np.ones(n, dtype=bool),
    )
    n_s = int(round(duration_s * fs))
    ts = np.arange(n_s) / fs
    physio = {
        "EEG": [PhysioBlock("EEG", fs, np.round(np.sin(2 * np.pi * 10 * ts) + 0.3 * rng.standard_normal(n_s), 4), 0)],
        "EOG": [PhysioBlock("EOG", fs, np.round(np.sin(2 * np.pi * 0.7 * ts) + 0.3 * rng.standard_normal(n_s), 4), 0)],
        "PULSE": [PhysioBlock("PULSE", fs, np.round(np.sin(2 * np.pi * 1.2 * ts) ** 16, 4), 0)],
    }
    if labels is None:
        labels = [(0, ALERT), (int(duration_s * US_PER_S) // 2, DROWSY)]
    markers = []
    if declared_offset_us is not None:
        markers = [{"video_us": int(declared_offset_us), "physio_us": 0}]
    return Session(session_id, subject_id, fps, frames, physio, labels, markers, {"EEG": fs, "EOG": fs, "PULSE": fs})


@pytest.fixture
def small_session():
    return make_session()


@pytest.fixture(scope="session")
def generated_session():
    from fusewake.synth import generate_session

    return generate_session(11, 150.0, return_truth=True)


@pytest.fixture(scope="session")
def small_benchmark():
    """Standardised window features of a 20-session / 10-subject synthetic dataset."""
    from fusewake.config import RunConfig
    from fusewake.fusion import fit_scaler
    from fusewake.pipeline import sessions_to_matrix
    from fusewake.synth import generate_dataset

    m = sessions_to_matrix(generate_dataset(42, 20, 10), RunConfig())
    return fit_scaler(m).transform(m)


@pytest.fixture(scope="session")
def small_dataset():
    from fusewake.synth import generate_dataset

    return generate_dataset(5, 12, 6, duration_s=150.0)


@pytest.fixture(scope="session")
def small_bundle(small_dataset):
    """Pipeline trained on a 12-session / 6-subject dataset (default run config)."""
    from fusewake.config import RunConfig
    from fusewake.pipeline import train_pipeline

    return train_pipeline(small_dataset, RunConfig())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
