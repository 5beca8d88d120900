"""Frequency features over HTTP requests and the three per-attack classifiers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import unquote

import numpy as np

from .learners import ClassifierModel, Dataset, UntrainedModel
from .packets import HttpRequest

TOKEN_SPEC_VERSION = 1
ATTACKS = ("XSS", "SQLI", "OSC")

# Tokens dropped from the reference attribute lists because their frequency
# summed to zero. "!" entries appear with and without a leading blank in the
# source table; both spellings are excluded.
EXCLUDED = {
    "XSS": (" !", "!", "^", "<>", "[]", "createelement", "search", "eval()", "string.fromcharcode"),
    "SQLI": ("-", "/**/", "'", ";", "#", "[", "]", "(", ")", "^", "|", "<>", "<=", ">=", "&&", "||",
             ":", " !=", "!=", "()"),
    "OSC": ("..\\", "\\.", "\\/", ":/", "etc/passwd", "`"),
}

# Version 1 token lists. Counting is case-insensitive, so entries are lower case.
DEFAULT_TOKENS = {
    "XSS": ("<script", "</script", "javascript:", "vbscript:", "onerror", "onload", "onmouseover",
            "onfocus", "alert(", "prompt(", "confirm(", "document.cookie", "document.write",
            "window.location", "innerhtml", "<iframe", "<img", "<svg", "<body", "src=", "href=",
            "style=", "expression(", "&#", "<", ">", '"'),
    "SQLI": ("select", "union", "insert", "update", "delete", "drop", "table", "from", "where",
             " or ", " and ", "order by", "group by", "having", "sleep(", "benchmark(", "waitfor",
             "information_schema", "concat(", "char(", "null", "--", "1=1", "'1'='1", "exec",
             "xp_cmdshell", "@@version"),
    "OSC": (";", "|", "&&", "$(", "${", "cat ", "ls ", "whoami", "uname", "wget ", "curl ", "nc ",
            "bash", "/bin/sh", "/bin/", "/etc/", "passwd", "shadow", "rm ", "chmod", "ping ",
            "echo ", "id;", "nslookup", "ifconfig", "> /", "2>&1"),
}


@dataclass(frozen=True)
class TokenFeatureSpec:
    attack: str
    tokens: tuple[str, ...]
    excluded: tuple[str, ...] = ()
    version: int = TOKEN_SPEC_VERSION

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack}")
        tokens = tuple(t.lower() for t in self.tokens)
        excluded = tuple(t.lower() for t in self.excluded)
        dropped = set(excluded)
        object.__setattr__(self, "tokens", tuple(t for t in dict.fromkeys(tokens) if t not in dropped))
        object.__setattr__(self, "excluded", excluded)
        if not self.tokens:
            raise ValueError(f"{self.attack} spec has no tokens left")

    @classmethod
    def default(cls, attack: str) -> "TokenFeatureSpec":
        return cls(attack, DEFAULT_TOKENS[attack], EXCLUDED[attack])

    @property
    def names(self) -> list[str]:
        return [f"tok:{t}" for t in self.tokens]

    def to_dict(self) -> dict:
        return {"attack": self.attack, "version": self.version, "tokens": list(self.tokens),
                "excluded": list(self.excluded)}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenFeatureSpec":
        return cls(d["attack"], tuple(d["tokens"]), tuple(d.get("excluded", ())), d.get("version", 1))


@dataclass
class HttpFeatureVector:
    attack: str
    counts: list[int]
    label: str | None = None


def normalize_raw(raw: str) -> str:
    """One percent-decoding pass, then lower case."""
    return unquote(raw).lower()


def count_tokens(text: str, tokens) -> list[int]:
    return [text.count(t) for t in tokens]


def extract_http_features(req: HttpRequest | str, spec: TokenFeatureSpec) -> HttpFeatureVector:
    raw = req if isinstance(req, str) else req.raw
    return HttpFeatureVector(spec.attack, count_tokens(normalize_raw(raw), spec.tokens))


def features_matrix(raws, spec: TokenFeatureSpec) -> np.ndarray:
    return np.array([count_tokens(normalize_raw(r), spec.tokens) for r in raws], dtype=float).reshape(
        len(raws), len(spec.tokens))


def dataset_for(raws, labels, attack: str, spec: TokenFeatureSpec | None = None) -> Dataset:
    """Binary dataset for one attack: rows of that class are positive, all others negative."""
    spec = spec or TokenFeatureSpec.default(attack)
    y = np.array([1 if lab.upper() == attack else 0 for lab in labels], dtype=int)
    return Dataset(spec.names, ["numeric"] * len(spec.tokens), features_matrix(raws, spec), y)


@dataclass
class HttpIds:
    """Three independent binary models, one per attack class."""

    models: dict[str, ClassifierModel]
    specs: dict[str, TokenFeatureSpec] = field(default_factory=dict)

    def __post_init__(self):
        for attack in ATTACKS:
            self.specs.setdefault(attack, TokenFeatureSpec.default(attack))

    def classify(self, req: HttpRequest | str) -> set[str]:
        return classify_request(req, self.models, self.specs)

    def save(self, path) -> None:
        doc = {"specs": {a: s.to_dict() for a, s in self.specs.items()},
               "models": {a: m.to_dict() for a, m in self.models.items()}}
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "HttpIds":
        doc = json.loads(Path(path).read_text())
        return cls({a: ClassifierModel.from_dict(m) for a, m in doc["models"].items()},
                   {a: TokenFeatureSpec.from_dict(s) for a, s in doc["specs"].items()})


def classify_request(req: HttpRequest | str, models: dict[str, ClassifierModel],
                     specs: dict[str, TokenFeatureSpec] | None = None) -> set[str]:
    labels = set()
    for attack in ATTACKS:
        model = models.get(attack)
        if model is None or not model.trained:
            raise UntrainedModel(f"no trained {attack} model")
        spec = (specs or {}).get(attack) or TokenFeatureSpec.default(attack)
        model.check_schema(spec.names)
        vec = extract_http_features(req, spec)
        if model.predict_one(vec.counts) == 1:
            labels.add(attack)
    return labels
