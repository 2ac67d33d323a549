"""Search instrumentation: per-step beams, acceptance events, rank observations."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class RankObservation:
    """The end-of-thinking token appeared in a parent's candidate window."""

    step: int
    parent_index: int
    rank: int
    window_size: int

    @property
    def rank_ratio(self) -> float:
        return self.rank / self.window_size


@dataclass(frozen=True)
class AcceptanceEvent:
    """A chain ending in the end-of-thinking token was accepted or discarded.

    ``rank`` is the token's 1-based rank in the parent's window for token-wise
    search; step-wise search has no window, so rank is None there.
    """

    step: int
    parent_index: int
    accepted: bool
    tokens: tuple[int, ...]
    phi: float
    rank: int | None = None


@dataclass(frozen=True)
class ForcedCompletionEvent:
    """A surviving candidate was closed at the step budget to meet the quota."""

    step: int
    tokens: tuple[int, ...]
    phi: float


@dataclass(frozen=True)
class StepRecord:
    """Beam contents after retention at one step: (tokens, phi) per survivor."""

    step: int
    beam: tuple[tuple[tuple[int, ...], float], ...]


@dataclass
class SearchTrace:
    """Everything a search did, in replayable order.

    ``expansion`` documents the pool contract: every parent proposes a full
    window/step set of size 2m before a single global retention cut.
    """

    strategy: str
    m: int
    h: int | None = None
    score_key: str = "phi"
    expansion: str = "2m-per-parent"
    steps: list[StepRecord] = field(default_factory=list)
    observations: list[RankObservation] = field(default_factory=list)
    events: list[AcceptanceEvent] = field(default_factory=list)
    forced: list[ForcedCompletionEvent] = field(default_factory=list)

    def record_step(self, step: int, beam: list) -> None:
        self.steps.append(
            StepRecord(step=step, beam=tuple((c.gen_tokens, phi) for c, phi in beam))
        )

    def beams(self) -> list[tuple[tuple[tuple[int, ...], float], ...]]:
        return [rec.beam for rec in self.steps]
