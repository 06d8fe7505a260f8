import pytest

from uisum.corpus import assign_splits, load_corpus, read_split_lists
from uisum.synth import make_fixture


def _load(root):
    corpus = load_corpus(root, root / "summaries.csv", root / "app_details.csv", root / "sfa.csv")
    return assign_splits(corpus, read_split_lists(root))


@pytest.fixture(scope="session")
def fixture50(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture50")
    info = make_fixture(root)
    return info, _load(root)


@pytest.fixture(scope="session")
def fixture20(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture20")
    info = make_fixture(root, n_screens=20, n_apps=5, seed=3)
    return info, _load(root)
