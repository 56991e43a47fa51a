"""Conclusion labels: deriving them from confidence intervals and parsing them from model output."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

if TYPE_CHECKING:
    from urca.corpus import ResearchQuestion


class ConclusionLabel(enum.Enum):
    """Three-way outcome of a two-arm comparison."""

    FAVOURS_LEFT = "favours_left"
    FAVOURS_RIGHT = "favours_right"
    NO_DIFFERENCE = "no_difference"


class Unparsed(enum.Enum):
    """Marker for model output that names no usable conclusion. A value, never an exception."""

    UNPARSED = "unparsed"


UNPARSED = Unparsed.UNPARSED

Prediction = Union[ConclusionLabel, Unparsed]

_LABELS_BY_VALUE = {label.value: label for label in ConclusionLabel}


def label_to_str(label: Prediction) -> str:
    return label.value


def label_from_str(value: str) -> ConclusionLabel:
    try:
        return _LABELS_BY_VALUE[value]
    except KeyError:
        raise ValueError(f"unknown conclusion label {value!r}") from None


EFFECT_KINDS = ("ratio", "mean_difference")


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate and confidence interval read off a forest plot row."""

    point: float
    ci_low: float
    ci_high: float
    effect_kind: str

    def __post_init__(self) -> None:
        if self.effect_kind not in EFFECT_KINDS:
            raise ValueError(f"effect_kind must be one of {EFFECT_KINDS}, got {self.effect_kind!r}")
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValueError(
                f"confidence interval must contain the point estimate: "
                f"[{self.ci_low}, {self.ci_high}] vs {self.point}"
            )
        if self.effect_kind == "ratio" and self.ci_low <= 0:
            raise ValueError("ratio estimates require strictly positive values")


def label_from_ci(estimate: EffectEstimate, direction_flipped: bool = False) -> ConclusionLabel:
    """Map a confidence interval to a conclusion label.

    The null threshold is 1 for ratio measures and 0 for mean differences.
    An interval entirely on the intervention side of the threshold (below it
    for ratios, above it for mean differences) favours the left arm, an
    interval entirely on the other side favours the right arm, and an
    interval touching or crossing the threshold (inclusive) is no difference.
    direction_flipped swaps the two favouring sides for outcomes where the
    plot's axes run the other way.
    """
    if estimate.effect_kind == "ratio":
        threshold = 1.0
        left_side_is_low = True
    else:
        threshold = 0.0
        left_side_is_low = False

    if estimate.ci_high < threshold:
        label = ConclusionLabel.FAVOURS_LEFT if left_side_is_low else ConclusionLabel.FAVOURS_RIGHT
    elif estimate.ci_low > threshold:
        label = ConclusionLabel.FAVOURS_RIGHT if left_side_is_low else ConclusionLabel.FAVOURS_LEFT
    else:
        label = ConclusionLabel.NO_DIFFERENCE

    if direction_flipped and label is not ConclusionLabel.NO_DIFFERENCE:
        label = (
            ConclusionLabel.FAVOURS_RIGHT
            if label is ConclusionLabel.FAVOURS_LEFT
            else ConclusionLabel.FAVOURS_LEFT
        )
    return label


def _normalise(text: str) -> str:
    return " ".join(text.split()).casefold()


ANSWER_PREFIX = "ANSWER:"


def parse_model_answer(text: str, question: "ResearchQuestion") -> Prediction:
    """Parse a free-text model reply into a conclusion label.

    The answer protocol asks the model to finish with one line of the form
    "ANSWER: <choice>". We take the last such line; without one, the whole
    reply is the candidate. The candidate is compared, case-insensitively and
    with whitespace collapsed, against the two intervention names and the
    literal "no difference". An exact match wins; failing that, a target that
    occurs as a substring of the candidate wins if it is the only one that
    does. Anything else is UNPARSED.
    """
    candidate = text
    for line in text.splitlines():
        stripped = line.lstrip()
        if stripped.startswith(ANSWER_PREFIX):
            candidate = stripped[len(ANSWER_PREFIX):]

    normalised = _normalise(candidate)
    targets = [
        (_normalise(question.left_intervention), ConclusionLabel.FAVOURS_LEFT),
        (_normalise(question.right_intervention), ConclusionLabel.FAVOURS_RIGHT),
        ("no difference", ConclusionLabel.NO_DIFFERENCE),
    ]

    exact = [label for target, label in targets if target and normalised == target]
    if len(exact) == 1:
        return exact[0]

    contained = [label for target, label in targets if target and target in normalised]
    if len(contained) == 1:
        return contained[0]
    return UNPARSED
