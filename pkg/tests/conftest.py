import numpy as np
import pytest

from actsc.activation_store import ActivationRecord, DatasetManifest, SamplePool


def make_records(activations, difficulties=None, prefix="p"):
    """Build records from a 2-D array; difficulties may contain None."""
    activations = np.asarray(activations, dtype=np.float64)
    n = activations.shape[0]
    difficulties = difficulties if difficulties is not None else [None] * n
    return [
        ActivationRecord(
            problem_id=f"{prefix}{i:04d}",
            activations=activations[i],
            difficulty=difficulties[i],
        )
        for i in range(n)
    ]


@pytest.fixture
def labeled_records():
    """Four 4-neuron records: two easy (level 1), two hard (level 5)."""
    acts = [
        [1.0, 0.5, 2.0, 0.0],
        [1.0, 0.7, 2.2, 0.0],
        [0.2, 0.5, 1.0, 0.0],
        [0.2, 0.3, 1.2, 0.0],
    ]
    return make_records(acts, difficulties=[1, 1, 5, 5])


def scripted_pool(answers_by_problem, gold=None, tokens=(10, 100)):
    """Replay pool serving fixed answer sequences with constant token counts."""
    tin, tout = tokens
    return SamplePool(
        gold_answers={pid: (gold or {}).get(pid, answers[0]) for pid, answers in answers_by_problem.items()},
        samples={
            pid: [(a, tin, tout) for a in answers]
            for pid, answers in answers_by_problem.items()
        },
    )


@pytest.fixture
def manifest4():
    return DatasetManifest(name="toy", neuron_count=4, record_count=0, source_model="m", layer_spec="ffn.0")
