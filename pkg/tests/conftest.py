import pytest

from chfsurrogate.dataset import fit_scaler, synthetic_chf


@pytest.fixture(scope="session")
def synth_tables():
    """Small noise-free synthetic problem: standardized train/val/test plus raw test data."""
    train, val, test = synthetic_chf(800, 21), synthetic_chf(100, 22), synthetic_chf(100, 23)
    sc = fit_scaler(train)
    return {"scaler": sc, "train": sc.transform(train.values), "val": sc.transform(val.values),
            "test": test, "train_raw": train}
