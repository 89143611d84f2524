"""Compositional text prompts and the two class prototypes derived from them.

Prompts are built as the cross product of state phrases (carrying an
object slot ``[o]``) and sentence templates (carrying a class slot
``[c]``).  Embedding and averaging the two prompt sets yields one unit
vector per class; anomaly probability is a binary softmax over the
cosine similarities to those prototypes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EncoderError, SlotError

OBJECT_SLOT = "[o]"
CLASS_SLOT = "[c]"

# Generic state phrases that apply to most inspection targets.
DEFAULT_NORMAL_STATES = [
    "[o]",
    "flawless [o]",
    "perfect [o]",
    "unblemished [o]",
    "[o] without flaw",
    "[o] without defect",
    "[o] without damage",
]

DEFAULT_ANOMALY_STATES = [
    "damaged [o]",
    "[o] with flaw",
    "[o] with defect",
    "[o] with damage",
]

DEFAULT_TEMPLATES = [
    "a cropped photo of the [c].",
    "a cropped photo of a [c].",
    "a close-up photo of a [c].",
    "a close-up photo of the [c].",
    "a bright photo of a [c].",
    "a bright photo of the [c].",
    "a dark photo of the [c].",
    "a dark photo of a [c].",
    "a jpeg corrupted photo of a [c].",
    "a jpeg corrupted photo of the [c].",
    "a blurry photo of the [c].",
    "a blurry photo of a [c].",
    "a photo of a [c].",
    "a photo of the [c].",
    "a photo of a small [c].",
    "a photo of the small [c].",
    "a photo of a large [c].",
    "a photo of the large [c].",
    "a photo of the [c] for visual inspection.",
    "a photo of a [c] for visual inspection.",
    "a photo of the [c] for anomaly detection.",
    "a photo of a [c] for anomaly detection.",
]

# Plain two-class baseline: one state pair, identity template.
BASELINE_NORMAL_STATES = ["normal [o]"]
BASELINE_ANOMALY_STATES = ["anomalous [o]"]
IDENTITY_TEMPLATES = ["[c]"]

DEFAULT_TEMPERATURE = 0.01


def _check_slot(pattern: str, slot: str) -> None:
    if pattern.count(slot) != 1:
        raise SlotError(
            f"pattern {pattern!r} must contain the slot {slot!r} exactly once"
        )


@dataclass(frozen=True)
class StateLexicon:
    """Normal/anomaly state phrases, each with one object slot ``[o]``.

    ``extra_normal`` / ``extra_anomaly`` carry task-specific additions
    (e.g. ``"[o] with missing part"``) supplied through configuration.
    """

    normal_states: tuple = tuple(DEFAULT_NORMAL_STATES)
    anomaly_states: tuple = tuple(DEFAULT_ANOMALY_STATES)
    extra_normal: tuple = ()
    extra_anomaly: tuple = ()

    def __post_init__(self):
        if not self.all_normal or not self.all_anomaly:
            raise ContractError("state lists must be non-empty")
        for pattern in (*self.all_normal, *self.all_anomaly):
            _check_slot(pattern, OBJECT_SLOT)

    @property
    def all_normal(self) -> tuple:
        return tuple(self.normal_states) + tuple(self.extra_normal)

    @property
    def all_anomaly(self) -> tuple:
        return tuple(self.anomaly_states) + tuple(self.extra_anomaly)


@dataclass(frozen=True)
class TemplateSet:
    """Sentence templates, each with one class slot ``[c]``."""

    templates: tuple = tuple(DEFAULT_TEMPLATES)

    def __post_init__(self):
        if not self.templates:
            raise ContractError("template list must be non-empty")
        for pattern in self.templates:
            _check_slot(pattern, CLASS_SLOT)


BASELINE_LEXICON = StateLexicon(
    normal_states=tuple(BASELINE_NORMAL_STATES),
    anomaly_states=tuple(BASELINE_ANOMALY_STATES),
)


def load_lexicon_file(path) -> tuple:
    """Read ``{"normal_states": [...], "anomaly_states": [...], "templates": [...]}``.

    Missing keys fall back to the defaults, so a file may override only
    the templates or only the states.  Returns (StateLexicon, TemplateSet).
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    lexicon = StateLexicon(
        normal_states=tuple(raw.get("normal_states", DEFAULT_NORMAL_STATES)),
        anomaly_states=tuple(raw.get("anomaly_states", DEFAULT_ANOMALY_STATES)),
        extra_normal=tuple(raw.get("task_specific_normal", ())),
        extra_anomaly=tuple(raw.get("task_specific_anomaly", ())),
    )
    templates = TemplateSet(templates=tuple(raw.get("templates", DEFAULT_TEMPLATES)))
    return lexicon, templates


@dataclass(frozen=True)
class ClassPrototypes:
    """Unit-norm mean text embeddings for the normal and anomaly classes."""

    normal: np.ndarray
    anomaly: np.ndarray
    n_normal_prompts: int
    n_anomaly_prompts: int
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        if self.n_normal_prompts <= 0 or self.n_anomaly_prompts <= 0:
            raise ContractError("prompt counts must be positive")
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        for name, vec in (("normal", self.normal), ("anomaly", self.anomaly)):
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                raise ContractError(f"{name} prototype norm {norm} not unit")


def compose_prompts(object_label: str, lexicon: StateLexicon = None,
                    templates: TemplateSet = None) -> dict:
    """Expand every (state, template) combination for one object label.

    Order is state-major, template-minor; duplicates are kept so repeated
    phrases weight the average by multiplicity.
    """
    if not object_label:
        raise ContractError("object_label must be non-empty; use 'object' as fallback")
    lexicon = lexicon or StateLexicon()
    templates = templates or TemplateSet()

    def expand(states):
        out = []
        for state in states:
            phrase = state.replace(OBJECT_SLOT, object_label)
            for template in templates.templates:
                out.append(template.replace(CLASS_SLOT, phrase))
        return out

    return {
        "normal": expand(lexicon.all_normal),
        "anomaly": expand(lexicon.all_anomaly),
    }


def build_prototypes(prompts: dict, encoder, temperature: float = DEFAULT_TEMPERATURE) -> ClassPrototypes:
    """Embed both prompt lists and reduce each to one unit vector.

    Per-prompt embeddings are L2-normalized before averaging and the
    class mean re-normalized afterwards.
    """
    if not prompts.get("normal") or not prompts.get("anomaly"):
        raise ContractError("both prompt lists must be non-empty")

    def prototype(prompt_list):
        vecs = []
        for prompt in prompt_list:
            try:
                v = np.asarray(encoder.encode_text(prompt), dtype=np.float64)
            except Exception as exc:  # noqa: BLE001 - context attached below
                raise EncoderError(f"text encoding failed for prompt {prompt!r}: {exc}") from exc
            v = v / np.linalg.norm(v)
            vecs.append(v)
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ContractError("degenerate prompt set: embeddings cancel out")
        return mean / norm

    return ClassPrototypes(
        normal=prototype(prompts["normal"]),
        anomaly=prototype(prompts["anomaly"]),
        n_normal_prompts=len(prompts["normal"]),
        n_anomaly_prompts=len(prompts["anomaly"]),
        temperature=float(temperature),
    )


def _check_unit(vec: np.ndarray, tol: float = 1e-4) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise ContractError(f"embedding norm {norm} outside unit tolerance {tol}")
    return vec


def zero_shot_score(image_embedding: np.ndarray, prototypes: ClassPrototypes) -> float:
    """Anomaly-class probability of a binary softmax over prototype cosines.

    Equals sigmoid((s_anomaly - s_normal) / temperature), which is shift
    invariant in the two similarities.
    """
    f = _check_unit(image_embedding)
    s_pos = float(np.dot(f, prototypes.anomaly))
    s_neg = float(np.dot(f, prototypes.normal))
    z = (s_pos - s_neg) / prototypes.temperature
    # Stable sigmoid for large |z|.
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def one_class_score(image_embedding: np.ndarray, prototypes: ClassPrototypes) -> float:
    """Negated similarity to the normal prototype (one-class baseline)."""
    f = _check_unit(image_embedding)
    return -float(np.dot(f, prototypes.normal))
