"""Rule-based breach-susceptibility scoring of data-access requests.

Every eligibility component is a risk indicator (1 = risky): a new user, an
illegal request, a sensitive risk factor. A request is non-malicious only when
the indicators sum to zero.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

FEATURE_NAMES = ("au_flag", "ad_flag", "rf_ratio", "pi", "volume", "fdb")


class ScoringError(ValueError):
    pass


class AuthenticationError(ScoringError):
    """Presented credentials do not match the registered ones."""


class UnknownDatasetError(ScoringError):
    pass


class Decision(str, enum.Enum):
    MALICIOUS = "malicious"
    NON_MALICIOUS = "non_malicious"


class Category(str, enum.Enum):
    NON_MALEVOLENT = "non-malevolent"
    MALEVOLENT = "malevolent"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AccessEvent:
    """One past data access: ``units`` of ``dataset_id`` at ``time``."""

    time: float
    dataset_id: str
    units: int = 1

    def to_dict(self) -> dict:
        return {"time": self.time, "dataset_id": self.dataset_id, "units": self.units}


@dataclass
class UserProfile:
    user_id: str
    credentials: str
    interaction_history: list[AccessEvent] = field(default_factory=list)
    leak_flags: list[bool] = field(default_factory=list)
    unauthorized_attempts: list[tuple[float, str]] = field(default_factory=list)
    category_label: Category = Category.UNKNOWN
    profession: str = "unknown"

    def __post_init__(self) -> None:
        self.category_label = Category(self.category_label)
        if len(self.leak_flags) != len(self.interaction_history):
            raise ScoringError(
                f"{self.user_id}: {len(self.leak_flags)} leak flags for "
                f"{len(self.interaction_history)} history entries"
            )

    def record_access(self, event: AccessEvent, leaked: bool = False) -> None:
        self.interaction_history.append(event)
        self.leak_flags.append(bool(leaked))

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "credentials": self.credentials,
            "interaction_history": [e.to_dict() for e in self.interaction_history],
            "leak_flags": [bool(x) for x in self.leak_flags],
            "unauthorized_attempts": [[t, d] for t, d in self.unauthorized_attempts],
            "category_label": self.category_label.value,
            "profession": self.profession,
        }

    @classmethod
    def from_dict(cls, d: dict) -> UserProfile:
        return cls(
            user_id=d["user_id"],
            credentials=d["credentials"],
            interaction_history=[AccessEvent(**e) for e in d.get("interaction_history", [])],
            leak_flags=list(d.get("leak_flags", [])),
            unauthorized_attempts=[(float(t), ds) for t, ds in d.get("unauthorized_attempts", [])],
            category_label=d.get("category_label", "unknown"),
            profession=d.get("profession", "unknown"),
        )


@dataclass(frozen=True)
class PolicyEntry:
    weight: float
    dataset_ids: tuple[str, ...]


@dataclass(frozen=True)
class AuthorizationPolicy:
    """Datasets a user may request, grouped by weighted category.

    Weights are reporting metadata; legality is plain set membership.
    """

    user_id: str
    entries: tuple[PolicyEntry, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for e in self.entries:
            if e.weight <= 0:
                raise ScoringError(f"{self.user_id}: policy weights must be positive")
            dup = seen.intersection(e.dataset_ids)
            if dup or len(set(e.dataset_ids)) != len(e.dataset_ids):
                raise ScoringError(f"{self.user_id}: dataset listed twice in policy")
            seen.update(e.dataset_ids)

    @property
    def authorized(self) -> frozenset[str]:
        return frozenset(d for e in self.entries for d in e.dataset_ids)

    def to_dict(self) -> dict:
        return {
            "user_id": self.user_id,
            "entries": [{"weight": e.weight, "dataset_ids": list(e.dataset_ids)} for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> AuthorizationPolicy:
        return cls(
            user_id=d["user_id"],
            entries=tuple(PolicyEntry(float(e["weight"]), tuple(e["dataset_ids"])) for e in d["entries"]),
        )


@dataclass(frozen=True)
class AccessRequest:
    request_id: str
    user_id: str
    requested_datasets: tuple[str, ...]
    credentials: str = ""
    profession: str = "unknown"
    request_type: str = "read"
    request_channel: str = "portal"
    data_amount: float = 1.0
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not self.requested_datasets:
            raise ScoringError(f"{self.request_id}: request names no datasets")
        object.__setattr__(self, "requested_datasets", tuple(self.requested_datasets))

    @property
    def live_details(self) -> dict:
        return {
            "profession": self.profession,
            "request_type": self.request_type,
            "request_channel": self.request_channel,
            "data_amount": self.data_amount,
        }

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "user_id": self.user_id,
            "requested_datasets": list(self.requested_datasets),
            "credentials": self.credentials,
            "timestamp": self.timestamp,
            **self.live_details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AccessRequest:
        return cls(
            request_id=d["request_id"],
            user_id=d["user_id"],
            requested_datasets=tuple(d["requested_datasets"]),
            credentials=d.get("credentials", ""),
            profession=d.get("profession", "unknown"),
            request_type=d.get("request_type", "read"),
            request_channel=d.get("request_channel", "portal"),
            data_amount=float(d.get("data_amount", 1.0)),
            timestamp=float(d.get("timestamp", 0.0)),
        )


@dataclass(frozen=True)
class RiskParams:
    """Scoring window and thresholds.

    ``volume_cap`` and ``fdb_cap`` only scale the feature vector.
    """

    window: tuple[float, float] = (0.0, 100.0)
    thr_risk: float = 0.5
    time_step: float = 1.0
    volume_cap: float = 100.0
    fdb_cap: float = 10.0

    def __post_init__(self) -> None:
        ta, tb = self.window
        if not ta < tb:
            raise ScoringError("window start must precede window end")
        if self.thr_risk <= 0:
            raise ScoringError("thr_risk must be positive")
        if self.volume_cap <= 0 or self.fdb_cap <= 0:
            raise ScoringError("feature caps must be positive")

    def in_window(self, t: float) -> bool:
        return self.window[0] <= t <= self.window[1]


@dataclass(frozen=True)
class BreachStats:
    db_mal: int
    db_grand: int
    pi: float
    fdb: int


@dataclass(frozen=True)
class EligibilityResult:
    au_flag: int
    ad_flag: int
    rf_flag: int
    extras: tuple[int, ...]
    xi_total: int
    pi: float
    fdb: int
    rf: float
    decision: Decision


def authenticate_and_novelty(request: AccessRequest, profile: UserProfile | None) -> tuple[bool, int]:
    """Credential check and existing/new indicator.

    An unregistered user has nothing to match against and is scored as new.
    """
    if profile is None:
        return True, 1
    if request.credentials != profile.credentials:
        raise AuthenticationError(f"credentials rejected for {request.user_id}")
    return True, 0 if len(profile.interaction_history) > 0 else 1


def check_request_legality(
    request: AccessRequest,
    policy: AuthorizationPolicy,
    catalog=None,
) -> int:
    if policy.user_id != request.user_id:
        raise ScoringError(f"policy of {policy.user_id} applied to {request.user_id}")
    if catalog is not None:
        unknown = [d for d in request.requested_datasets if d not in catalog]
        if unknown:
            raise UnknownDatasetError(f"unknown dataset ids {unknown}")
    return 0 if set(request.requested_datasets) <= policy.authorized else 1


def breach_statistics(profile: UserProfile, params: RiskParams) -> BreachStats:
    db_mal = db_grand = 0
    for event, leaked in zip(profile.interaction_history, profile.leak_flags):
        if params.in_window(event.time):
            db_grand += event.units
            if leaked:
                db_mal += event.units
    pi = db_mal / db_grand if db_grand else 0.0
    fdb = sum(1 for t, _ in profile.unauthorized_attempts if params.in_window(t))
    return BreachStats(db_mal=db_mal, db_grand=db_grand, pi=pi, fdb=fdb)


def risk_factor_flag(pi: float, fdb: int, params: RiskParams) -> tuple[float, int]:
    if not 0.0 <= pi <= 1.0 or fdb < 0:
        raise ScoringError(f"invalid breach statistics pi={pi!r} fdb={fdb!r}")
    rf = pi * fdb
    return rf, 0 if params.thr_risk > rf else 1


def evaluate_susceptibility(
    au: int,
    ad: int,
    rf_flag: int,
    extras=(),
    *,
    pi: float = 0.0,
    fdb: int = 0,
    rf: float = 0.0,
) -> EligibilityResult:
    extras = tuple(int(x) for x in extras)
    flags = (au, ad, rf_flag) + extras
    if any(f not in (0, 1) for f in flags):
        raise ScoringError(f"flags must be 0/1, got {flags}")
    xi = sum(flags)
    return EligibilityResult(
        au_flag=au,
        ad_flag=ad,
        rf_flag=rf_flag,
        extras=extras,
        xi_total=xi,
        pi=pi,
        fdb=fdb,
        rf=rf,
        decision=Decision.NON_MALICIOUS if xi < 1 else Decision.MALICIOUS,
    )


def score_request(
    request: AccessRequest,
    profile: UserProfile | None,
    policy: AuthorizationPolicy,
    params: RiskParams,
    extras=(),
    catalog=None,
) -> EligibilityResult:
    """Run the full rule chain for one request; raises on failed authentication."""
    _, au = authenticate_and_novelty(request, profile)
    ad = check_request_legality(request, policy, catalog)
    if profile is None:
        stats = BreachStats(0, 0, 0.0, 0)
    else:
        stats = breach_statistics(profile, params)
    rf, rf_flag = risk_factor_flag(stats.pi, stats.fdb, params)
    return evaluate_susceptibility(au, ad, rf_flag, extras, pi=stats.pi, fdb=stats.fdb, rf=rf)


def feature_vector(result: EligibilityResult, request: AccessRequest, params: RiskParams) -> np.ndarray:
    """Fixed-order features in [0, 1], named by ``FEATURE_NAMES``."""
    return np.array(
        [
            result.au_flag,
            result.ad_flag,
            min(result.rf / params.thr_risk, 1.0),
            result.pi,
            min(max(request.data_amount, 0.0) / params.volume_cap, 1.0),
            min(result.fdb / params.fdb_cap, 1.0),
        ],
        dtype=float,
    )
