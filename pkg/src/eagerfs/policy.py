"""Mount-time behaviour switches."""

from __future__ import annotations

from dataclasses import dataclass

from .ops import MUTATION_KIND_SET, OpKind

DEFAULT_MAX_PENDING = 300


@dataclass(frozen=True)
class EagerPolicy:
    """Which mutating kinds are acknowledged before execution.

    Every mutating kind is eager by default; `eager_off` lists the kinds
    forced back to synchronous execution.  Reads are never eager, so they
    have no flag.  Instances are frozen: the policy is fixed for the
    lifetime of a mount.
    """

    eager_off: frozenset[OpKind] = frozenset()
    mock_attr: bool = True
    max_pending: int = DEFAULT_MAX_PENDING
    abort_on_error: bool = False

    def __post_init__(self):
        unknown = frozenset(self.eager_off) - MUTATION_KIND_SET
        if unknown:
            names = ", ".join(sorted(k.value for k in unknown))
            raise ValueError(f"not a mutating kind, cannot toggle eagerness: {names}")
        object.__setattr__(self, "eager_off", frozenset(self.eager_off))
        if self.max_pending < 1:
            raise ValueError("max_pending must be at least 1")

    def is_eager(self, kind: OpKind) -> bool:
        return kind in MUTATION_KIND_SET and kind not in self.eager_off

    @classmethod
    def passthrough(cls, **overrides) -> "EagerPolicy":
        """Everything synchronous, nothing mocked: plain passthrough."""
        overrides.setdefault("mock_attr", False)
        return cls(eager_off=MUTATION_KIND_SET, **overrides)
