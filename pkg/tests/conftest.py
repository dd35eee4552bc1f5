import numpy as np
import pytest

from npcov import trainkit as tk


@pytest.fixture(scope="session")
def blobs_all():
    return tk.make_blobs(dims=2, classes=3, per_class=140, seed=11)


@pytest.fixture(scope="session")
def blobs_split(blobs_all):
    return tk.split_dataset(blobs_all, 0.25, seed=1)


@pytest.fixture(scope="session")
def blobs_train(blobs_split):
    return blobs_split[0]


@pytest.fixture(scope="session")
def blobs_test(blobs_split):
    return blobs_split[1]


@pytest.fixture(scope="session")
def net(blobs_train):
    return tk.train_sgd([2, 16, 16, 3], blobs_train, tk.TrainConfig(epochs=60, seed=0))
