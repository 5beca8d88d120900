"""Default detector models, trained deterministically on the synthetic corpora."""

from __future__ import annotations

import logging
from functools import lru_cache
from importlib import resources
from pathlib import Path

from . import botnet, corpus
from .http_ids import ATTACKS, HttpIds
from .learners import ClassifierModel, Dataset, class_weights, train_logistic, train_tree

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0
FILES = {"http_ids": "http_ids.json", "ddos": "ddos.json", "botnet": "botnet.json"}


def botnet_dataset(flows, labels) -> Dataset:
    return Dataset(list(botnet.FEATURE_NAMES), list(botnet.FEATURE_KINDS),
                   [botnet.features_of(f) for f in flows], labels)


def train(ds: Dataset, family: str = "tree", task: str = "", seed: int = 0) -> ClassifierModel:
    w = class_weights(ds.y)
    if family == "tree":
        return train_tree(ds, w, task=task)
    if family == "lr":
        return train_logistic(ds, w, task=task, seed=seed)
    raise ValueError(f"unknown model family {family!r}")


def build_default_models(seed: int = DEFAULT_SEED, family: str = "tree"):
    """(HttpIds, ddos model, botnet model) trained on the full default corpora."""
    rows = corpus.http_rows(seed)
    ids = HttpIds({a: train(corpus.http_dataset(rows, a), family, f"httpids:{a}") for a in ATTACKS})
    ddos_model = train(corpus.ddos_dataset(seed), family, "ddos")
    bot_model = train(botnet_dataset(*corpus.botnet_flows(seed)), family, "botnet")
    return ids, ddos_model, bot_model


def save_models(models, out_dir) -> None:
    ids, ddos_model, bot_model = models
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids.save(out / FILES["http_ids"])
    ddos_model.save(out / FILES["ddos"])
    bot_model.save(out / FILES["botnet"])


def load_models(model_dir):
    d = Path(model_dir)
    return (HttpIds.load(d / FILES["http_ids"]), ClassifierModel.load(d / FILES["ddos"]),
            ClassifierModel.load(d / FILES["botnet"]))


@lru_cache(maxsize=1)
def load_default_models():
    """Bundled models; rebuilt in memory if the package data is missing."""
    root = resources.files("soar") / "data" / "models"
    if all((root / f).is_file() for f in FILES.values()):
        with resources.as_file(root) as d:
            return load_models(d)
    logger.warning("bundled models missing; training defaults in memory")
    return build_default_models()
