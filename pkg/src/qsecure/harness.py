"""Protocol simulation.

Agencies basis-encode their records and upload them under fresh one-time-pad
keys. Data users send access requests; the supplier runs the rule chain, then
the QFNN as a second screen, and grants only when both call the request
benign. Ground-truth labels come from the synthetic agent categories, so
accuracy is measured against the generator, not against the engine.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .knowledge import KnowledgeDB
from .qfnn import (
    QfnnArchitecture,
    QfnnNetwork,
    TrainingConfig,
    label_pair,
    predict,
    train,
)
from .qotp import (
    CipherState,
    CiphertextRow,
    KeyLedger,
    KeyMismatchError,
    PaddingKey,
    basis_encode_record,
    decrypt,
    encrypt,
    generate_key,
    qrng_generate,
)
from .quantum import StateVector
from .records import FALSE_WORDS, TRUE_WORDS, BUNDLED, load_schema, split_blocks
from .scoring import (
    AccessEvent,
    AccessRequest,
    AuthenticationError,
    AuthorizationPolicy,
    Category,
    Decision,
    PolicyEntry,
    RiskParams,
    UserProfile,
    feature_vector,
    score_request,
)

BUCKET_LABELS = {500: "0.5k", 1000: "1.0k", 1500: "1.5k"}
ENC_COST_INSTANCES = (5, 10, 15, 20, 25)
ENC_BLOCK_QUBITS = 6
KEY_PATTERN_BITS = 5
KEY_SAMPLES = 9600

GRANT = "grant"
DENY = "deny"
AUTH_REJECTED = "auth_rejected"

PROFESSIONS = ("physician", "nurse", "researcher", "analyst", "administrator", "pharmacist")
REQUEST_TYPES = ("read", "download", "export")
CHANNELS = ("portal", "api", "batch")

# Published figures, copied into every report for context. Nothing here is recomputed.
REFERENCE = {
    "accuracy": {"0.5k": 0.8635, "1.0k": 0.8864, "1.5k": 0.8942, "overall": 0.8914},
    "accuracy_table_pct": 89.02,
    "baseline_accuracy_pct": {"MLPAM": 76.65, "IoT-HSM": 86.32, "QM-MUP": 84.71, "MAIDS": 86.75, "FedMUP": 87.24},
    "baseline_bucket_accuracy": {
        "MLPAM": {"0.5k": 0.7502, "1.0k": 0.7461, "1.5k": 0.7667, "overall": 0.7665},
        "IoT-HSM": {"0.5k": 0.8411, "1.0k": 0.8502, "1.5k": 0.8267, "overall": 0.8632},
        "QM-MUP": {"0.5k": 0.8598, "1.0k": 0.8324, "1.5k": 0.8598, "overall": 0.8471},
    },
    "encryption_ms": {
        "surveillance": [17.79, 16.91, 20.01, 24.91, 26.95],
        "tcga": [18.90, 15.24, 16.30, 17.41, 23.75],
        "diabetes": [28.97, 25.60, 32.68, 35.15, 41.05],
    },
    "loss_final": {"2k_4q": 0.09988835619, "10k_2q": 0.230879856, "10k_4q": 0.1014976696},
}


class HarnessError(ValueError):
    pass


class IngestError(HarnessError):
    pass


@dataclass(frozen=True)
class DataObject:
    object_id: str
    agency_id: str
    category: str
    payload_bits: str
    sensitivity: str = "low"

    def __post_init__(self) -> None:
        if not self.payload_bits or set(self.payload_bits) - {"0", "1"}:
            raise HarnessError(f"{self.object_id}: payload must be a non-empty bitstring")
        if self.sensitivity not in ("low", "high"):
            raise HarnessError(f"{self.object_id}: sensitivity must be low or high")

    def to_dict(self) -> dict:
        return asdict(self)


def _risk_params_dict(p: RiskParams) -> dict:
    d = asdict(p)
    d["window"] = list(p.window)
    return d


@dataclass(frozen=True)
class SimulationScenario:
    agent_count: int = 2000
    # fractions of non-malevolent, malevolent, unknown agents
    category_mix: tuple[float, float, float] = (0.6, 0.25, 0.15)
    buckets: tuple[int, ...] = (500, 1000, 1500)
    label_noise: float = 0.1
    seed: int = 0
    risk_params: RiskParams = field(default_factory=RiskParams)
    qfnn_config: TrainingConfig = field(default_factory=TrainingConfig)
    use_qfnn: bool = True
    train_fraction: float = 0.7
    retrain_every: int | None = None
    auth_failure_rate: float = 0.0
    objects_per_agency: int = 30
    record_wall_time: bool = False

    def __post_init__(self) -> None:
        mix = tuple(float(x) for x in self.category_mix)
        object.__setattr__(self, "category_mix", mix)
        object.__setattr__(self, "buckets", tuple(int(b) for b in self.buckets))
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise HarnessError("category_mix must be three non-negative fractions summing to 1")
        if self.agent_count < 1:
            raise HarnessError("agent_count must be >= 1")
        if not self.buckets or min(self.buckets) < 1:
            raise HarnessError("buckets must be positive request counts")
        if not 0.0 <= self.label_noise <= 1.0:
            raise HarnessError("label_noise must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise HarnessError("train_fraction must lie in (0, 1)")
        if self.retrain_every is not None and self.retrain_every < 1:
            raise HarnessError("retrain_every must be >= 1")
        if not 0.0 <= self.auth_failure_rate <= 1.0:
            raise HarnessError("auth_failure_rate must lie in [0, 1]")
        if self.objects_per_agency < 6:
            raise HarnessError("objects_per_agency must be >= 6")

    @property
    def request_count(self) -> int:
        return math.ceil(sum(self.buckets) / (1.0 - self.train_fraction) - 1e-9)

    def to_dict(self) -> dict:
        return {
            "agent_count": self.agent_count,
            "category_mix": {c.value: f for c, f in zip(Category, self.category_mix)},
            "buckets": list(self.buckets),
            "label_noise": self.label_noise,
            "seed": self.seed,
            "risk_params": _risk_params_dict(self.risk_params),
            "qfnn_config": asdict(self.qfnn_config),
            "use_qfnn": self.use_qfnn,
            "train_fraction": self.train_fraction,
            "retrain_every": self.retrain_every,
            "auth_failure_rate": self.auth_failure_rate,
            "objects_per_agency": self.objects_per_agency,
            "record_wall_time": self.record_wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimulationScenario:
        d = dict(d)
        try:
            mix = d.get("category_mix")
            if isinstance(mix, dict):
                unknown = set(mix) - {c.value for c in Category}
                if unknown:
                    raise HarnessError(f"unknown categories in category_mix: {sorted(unknown)}")
                d["category_mix"] = tuple(float(mix.get(c.value, 0.0)) for c in Category)
            if "risk_params" in d:
                rp = dict(d["risk_params"])
                if "window" in rp:
                    rp["window"] = tuple(rp["window"])
                d["risk_params"] = RiskParams(**rp)
            if "qfnn_config" in d:
                d["qfnn_config"] = TrainingConfig(**d["qfnn_config"])
            return cls(**d)
        except TypeError as exc:
            raise HarnessError(f"bad scenario: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> SimulationScenario:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise HarnessError(f"{path}: {exc}") from None

    def with_seed(self, seed: int) -> SimulationScenario:
        d = self.to_dict()
        d["seed"] = seed
        return SimulationScenario.from_dict(d)


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("objects", "agents", "requests", "keys", "split", "model", "randomness")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def _allocate(total: int, fractions) -> np.ndarray:
    """Largest-remainder rounding of ``fractions * total``."""
    raw = np.asarray(fractions, dtype=float) * total
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


@dataclass
class Population:
    objects: list[DataObject]
    profiles: dict[str, UserProfile]  # registered users; unknown agents are absent
    policies: dict[str, AuthorizationPolicy]
    requests: list[AccessRequest]  # time order
    labels: dict[str, bool]  # request_id -> malicious
    categories: dict[str, Category]
    masked: frozenset[str]  # malevolent users whose logs look clean

    @property
    def catalog(self) -> frozenset[str]:
        return frozenset(o.object_id for o in self.objects)


def make_objects(per_agency: int, rng: np.random.Generator) -> list[DataObject]:
    objects = []
    for name in BUNDLED:
        schema = load_schema(name)
        for i, rec in enumerate(schema.sample(per_agency, rng)):
            objects.append(
                DataObject(
                    object_id=f"{name}-{i:03d}",
                    agency_id=f"agency-{name}",
                    category=name,
                    payload_bits=schema.quantize(rec),
                    sensitivity="high" if rng.random() < 0.3 else "low",
                )
            )
    return objects


def _policy(uid: str, granted: list[DataObject]) -> AuthorizationPolicy:
    entries = []
    for weight, level in ((2.0, "high"), (1.0, "low")):
        ids = tuple(o.object_id for o in granted if o.sensitivity == level)
        if ids:
            entries.append(PolicyEntry(weight, ids))
    return AuthorizationPolicy(uid, tuple(entries))


def _pick(rng, pool, k):
    return [pool[i] for i in sorted(rng.choice(len(pool), size=min(k, len(pool)), replace=False))]


def synthesize_agents(scenario: SimulationScenario) -> Population:
    """Agents, their logs and policies, and a time-ordered request stream."""
    rng = _streams(scenario.seed)
    params = scenario.risk_params
    ta, tb = params.window
    objects = make_objects(scenario.objects_per_agency, rng["objects"])
    ids = [o.object_id for o in objects]

    g = rng["agents"]
    cats = list(Category)
    assigned = g.permutation(np.repeat(np.arange(3), _allocate(scenario.agent_count, scenario.category_mix)))
    profiles, policies, categories, creds, masked = {}, {}, {}, {}, set()
    for i, c in enumerate(assigned):
        uid = f"u{i:05d}"
        cat = cats[int(c)]
        categories[uid] = cat
        creds[uid] = f"pw-{int(g.integers(1 << 32)):08x}"
        profession = PROFESSIONS[int(g.integers(len(PROFESSIONS)))]
        if cat is Category.UNKNOWN:
            continue
        granted = _pick(g, objects, int(g.integers(5, 16)))
        policy = _policy(uid, granted)
        allowed = sorted(policy.authorized)
        outside = [d for d in ids if d not in policy.authorized]

        n_ev = int(g.integers(5, 21))
        times = np.sort(g.uniform(ta, tb, size=n_ev))
        events = [AccessEvent(float(t), allowed[int(g.integers(len(allowed)))], int(g.integers(1, 6))) for t in times]
        leaks = [False] * n_ev
        risky = cat is Category.MALEVOLENT and g.random() >= scenario.label_noise
        if cat is Category.MALEVOLENT and not risky:
            masked.add(uid)
        if risky:
            target = g.uniform(0.3, 0.8)
            grand = sum(e.units for e in events)
            mal = 0
            for j in g.permutation(n_ev):
                if mal >= target * grand:
                    break
                leaks[j] = True
                mal += events[j].units
            # keep rf well clear of the threshold
            n_att = max(int(g.integers(3, 11)), math.ceil(1.5 * params.thr_risk * grand / mal))
        else:
            n_att = int(g.integers(0, 3))
        attempts = [(float(t), outside[int(g.integers(len(outside)))]) for t in np.sort(g.uniform(ta, tb, size=n_att))]
        profiles[uid] = UserProfile(uid, creds[uid], events, leaks, attempts, cat, profession)
        policies[uid] = policy

    r = rng["requests"]
    n = scenario.request_count
    who = r.integers(scenario.agent_count, size=n)
    stamps = np.sort(r.uniform(tb, tb + (tb - ta), size=n))
    cap = params.volume_cap
    requests, labels = [], {}
    for k, (a, t) in enumerate(zip(who, stamps)):
        uid = f"u{int(a):05d}"
        cat = categories[uid]
        n_ds = int(r.integers(1, 4))
        if cat is Category.UNKNOWN:
            datasets = _pick(r, ids, n_ds)
            amount = r.uniform(0.01, 1.0) * cap
        else:
            pol = sorted(policies[uid].authorized)
            datasets = _pick(r, pol, n_ds)
            if cat is Category.MALEVOLENT:
                amount = r.uniform(0.3, 1.0) * cap
                if uid not in masked and r.random() < 0.5:
                    outside = [d for d in ids if d not in policies[uid].authorized]
                    datasets[-1] = outside[int(r.integers(len(outside)))]
            else:
                amount = r.uniform(0.01, 0.5) * cap
        cred = creds[uid] if r.random() >= scenario.auth_failure_rate else creds[uid] + "-stale"
        rid = f"r{k:06d}"
        requests.append(
            AccessRequest(
                request_id=rid,
                user_id=uid,
                requested_datasets=tuple(datasets),
                credentials=cred,
                profession=profiles[uid].profession if uid in profiles else "unknown",
                request_type=REQUEST_TYPES[int(r.integers(len(REQUEST_TYPES)))],
                request_channel=CHANNELS[int(r.integers(len(CHANNELS)))],
                data_amount=round(float(amount), 3),
                timestamp=round(float(t), 6),
            )
        )
        labels[rid] = cat is not Category.NON_MALEVOLENT
    return Population(objects, profiles, policies, requests, labels, categories, frozenset(masked))


def encrypt_bits(bits: str, key: PaddingKey, block_qubits: int = ENC_BLOCK_QUBITS) -> str:
    """Pad a basis payload block by block on the statevector simulator."""
    if key.n_qubits != len(bits):
        raise KeyMismatchError(f"key covers {key.n_qubits} qubits, payload has {len(bits)}")
    out, start = [], 0
    for block in split_blocks(bits, block_qubits):
        sl = slice(start, start + len(block))
        sub = PaddingKey(key.alpha[sl], key.beta[sl], key_id=key.key_id)
        out.append(encrypt(basis_encode_record(block), sub).state.basis_bits())
        start += len(block)
    return "".join(out)


def decrypt_bits(cipher_bits: str, key: PaddingKey, block_qubits: int = ENC_BLOCK_QUBITS) -> str:
    if key.n_qubits != len(cipher_bits):
        raise KeyMismatchError(f"key covers {key.n_qubits} qubits, payload has {len(cipher_bits)}")
    out, start = [], 0
    for block in split_blocks(cipher_bits, block_qubits):
        sl = slice(start, start + len(block))
        sub = PaddingKey(key.alpha[sl], key.beta[sl], key_id=key.key_id)
        out.append(decrypt(CipherState(StateVector.from_bits(block), key.key_id), sub).basis_bits())
        start += len(block)
    return "".join(out)


@dataclass
class UploadResult:
    rows: list[CiphertextRow]
    ledger: KeyLedger
    cost_table: list[dict]


def upload_encrypted(
    agency_id: str,
    objects,
    seed: int,
    *,
    block_qubits: int = ENC_BLOCK_QUBITS,
    instance_counts=ENC_COST_INSTANCES,
    record_wall_time: bool = False,
) -> UploadResult:
    """Encrypt each object under its own QRNG key.

    The cost table counts simulated gate applications (encoding X gates plus
    pad gates) for the first k objects, cycling when fewer exist. Wall time is
    optional because it breaks byte-stable reports.
    """
    objects = list(objects)
    seen = set()
    for o in objects:
        if o.agency_id != agency_id:
            raise HarnessError(f"{o.object_id} belongs to {o.agency_id}, not {agency_id}")
        if o.object_id in seen:
            raise HarnessError(f"duplicate object id {o.object_id}")
        seen.add(o.object_id)
    rng = np.random.default_rng(seed)
    ledger = KeyLedger()
    rows, keys = [], []
    for o in objects:
        key = generate_key(len(o.payload_bits), int(rng.integers(2**63)), key_id=f"{o.object_id}/k")
        ledger.add(key)
        keys.append(key)
        rows.append(CiphertextRow(o.object_id, len(o.payload_bits), encrypt_bits(o.payload_bits, key, block_qubits), key.key_id))

    table = []
    if objects:
        category = objects[0].category
        reference = REFERENCE["encryption_ms"].get(category)
        for j, k in enumerate(instance_counts):
            chosen = [i % len(objects) for i in range(k)]
            row = {
                "dataset": category,
                "instances": k,
                "blocks": sum(-(-len(objects[i].payload_bits) // block_qubits) for i in chosen),
                "gate_ops": sum(
                    objects[i].payload_bits.count("1") + keys[i].alpha.count("1") + keys[i].beta.count("1")
                    for i in chosen
                ),
                "reference_ms": reference[j] if reference and j < len(reference) else None,
            }
            if record_wall_time:
                encrypt_bits(objects[0].payload_bits, keys[0], block_qubits)  # warm-up, discarded
                t0 = time.perf_counter()
                for i in chosen:
                    encrypt_bits(objects[i].payload_bits, keys[i], block_qubits)
                row["wall_ms"] = (time.perf_counter() - t0) * 1e3
            table.append(row)
    return UploadResult(rows, ledger, table)


@dataclass(frozen=True)
class DecisionRecord:
    request_id: str
    user_id: str
    outcome: str
    reason: str = ""
    rule_decision: str | None = None
    xi_total: int | None = None
    qfnn_label: str | None = None
    qfnn_score: float | None = None
    features: tuple[float, ...] | None = None

    @property
    def granted(self) -> bool:
        return self.outcome == GRANT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = list(self.features) if self.features is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DecisionRecord:
        d = dict(d)
        if d.get("features") is not None:
            d["features"] = tuple(d["features"])
        return cls(**d)


def process_request(
    request: AccessRequest,
    kdb: KnowledgeDB,
    model: QfnnNetwork | None,
    params: RiskParams,
    *,
    catalog=None,
    use_qfnn: bool = True,
) -> DecisionRecord:
    """Screen one request and update ``kdb`` with the outcome."""
    if use_qfnn and model is None:
        raise HarnessError("QFNN screening requested without a model")
    profile = kdb.profile(request.user_id)
    if profile is None:
        profile = UserProfile(request.user_id, request.credentials, profession=request.profession)
        kdb.register(profile)
    kdb.log_request(request)
    try:
        result = score_request(request, profile, kdb.policy(request.user_id), params, catalog=catalog)
    except AuthenticationError:
        kdb.deny(request, "credentials")
        return DecisionRecord(request.request_id, request.user_id, AUTH_REJECTED, reason="credentials")

    x = feature_vector(result, request, params)
    label = score = None
    reasons = []
    if result.decision is Decision.MALICIOUS:
        reasons.append("rules")
    if use_qfnn:
        label, score = predict(model, x)
        if label is Decision.MALICIOUS:
            reasons.append("qfnn")
    reason = "+".join(reasons)
    if reasons:
        kdb.deny(request, reason)
    else:
        kdb.grant(request)
    return DecisionRecord(
        request_id=request.request_id,
        user_id=request.user_id,
        outcome=DENY if reasons else GRANT,
        reason=reason,
        rule_decision=result.decision.value,
        xi_total=result.xi_total,
        qfnn_label=label.value if label is not None else None,
        qfnn_score=float(score) if score is not None else None,
        features=tuple(float(v) for v in x),
    )


def stratified_split(labels, n_test: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean test mask with ``n_test`` entries, class shares preserved."""
    y = np.asarray(labels, dtype=bool)
    if not 0 < n_test < y.size:
        raise HarnessError(f"cannot hold out {n_test} of {y.size} requests")
    pos, neg = np.flatnonzero(y), np.flatnonzero(~y)
    k_pos = min(pos.size, max(0, round(n_test * pos.size / y.size)))
    k_neg = n_test - k_pos
    if k_neg > neg.size:
        k_neg, k_pos = neg.size, n_test - neg.size
    mask = np.zeros(y.size, dtype=bool)
    mask[rng.choice(pos, size=k_pos, replace=False)] = True
    mask[rng.choice(neg, size=k_neg, replace=False)] = True
    return mask


def _training_pairs(requests, labels, kdb, params, catalog, arch):
    xs, ys = [], []
    for req in requests:
        try:
            res = score_request(req, kdb.profile(req.user_id), kdb.policy(req.user_id), params, catalog=catalog)
        except AuthenticationError:
            continue
        xs.append(feature_vector(res, req, params))
        ys.append(labels[req.request_id])
    return [label_pair(x, y, arch) for x, y in zip(xs, ys)], np.array(xs), np.array(ys, dtype=bool)


def build_kdb(pop: Population) -> KnowledgeDB:
    kdb = KnowledgeDB()
    for uid, prof in pop.profiles.items():
        kdb.register(copy.deepcopy(prof), pop.policies[uid])
    return kdb


def build_training_set(scenario: SimulationScenario):
    """Feature matrix and labels of the training split, as the simulation sees them."""
    pop = synthesize_agents(scenario)
    mask = stratified_split([pop.labels[r.request_id] for r in pop.requests], sum(scenario.buckets), _streams(scenario.seed)["split"])
    train_reqs = [r for r, m in zip(pop.requests, mask) if not m]
    arch = QfnnArchitecture.from_mode(scenario.qfnn_config.qubit_mode)
    _, x, y = _training_pairs(train_reqs, pop.labels, build_kdb(pop), scenario.risk_params, pop.catalog, arch)
    return x, y


def confusion(predicted_malicious, truth) -> dict:
    p = np.asarray(predicted_malicious, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    return {
        "tp": int((p & t).sum()),
        "fp": int((p & ~t).sum()),
        "tn": int((~p & ~t).sum()),
        "fn": int((~p & t).sum()),
    }


def accuracy_of(c: dict) -> float:
    total = c["tp"] + c["fp"] + c["tn"] + c["fn"]
    return (c["tp"] + c["tn"]) / total if total else float("nan")


def key_randomness_table(seed: int, samples: int = KEY_SAMPLES, bits: int = KEY_PATTERN_BITS) -> list[dict]:
    stream = qrng_generate(samples * bits, seed)
    counts = Counter(stream[i : i + bits] for i in range(0, samples * bits, bits))
    patterns = [format(i, f"0{bits}b") for i in range(2**bits)]
    return [{"key": p, "count": counts.get(p, 0), "probability": counts.get(p, 0) / samples} for p in patterns]


@dataclass
class SimulationReport:
    seed: int
    scenario: dict
    buckets: list[dict]  # label, requests, tp, fp, tn, fn, accuracy
    overall: dict
    loss_trace: list[float]
    retrain_losses: list[float]
    decisions: list[DecisionRecord]
    enc_cost: list[dict]
    key_randomness: list[dict]
    counts: dict
    warnings: list[str] = field(default_factory=list)

    @property
    def accuracy(self) -> dict[str, float]:
        acc = {b["bucket"]: b["accuracy"] for b in self.buckets}
        acc["overall"] = self.overall["accuracy"]
        return acc

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario,
            "buckets": self.buckets,
            "overall": self.overall,
            "loss_trace": self.loss_trace,
            "retrain_losses": self.retrain_losses,
            "decisions": [d.to_dict() for d in self.decisions],
            "enc_cost": self.enc_cost,
            "key_randomness": self.key_randomness,
            "counts": self.counts,
            "warnings": self.warnings,
            "reference": REFERENCE,
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimulationReport:
        try:
            return cls(
                seed=d["seed"],
                scenario=d["scenario"],
                buckets=d["buckets"],
                overall=d["overall"],
                loss_trace=d["loss_trace"],
                retrain_losses=d.get("retrain_losses", []),
                decisions=[DecisionRecord.from_dict(r) for r in d["decisions"]],
                enc_cost=d["enc_cost"],
                key_randomness=d["key_randomness"],
                counts=d["counts"],
                warnings=d.get("warnings", []),
            )
        except (KeyError, TypeError) as exc:
            raise HarnessError(f"malformed report: {exc}") from None


def _bucket_label(size: int, index: int) -> str:
    return BUCKET_LABELS.get(size, f"b{index}-{size}")


def run_simulation(scenario: SimulationScenario, progress=None) -> SimulationReport:
    rng = _streams(scenario.seed)
    params = scenario.risk_params
    cfg = scenario.qfnn_config
    pop = synthesize_agents(scenario)
    catalog = pop.catalog

    enc_cost, n_keys = [], 0
    for agency in sorted({o.agency_id for o in pop.objects}):
        res = upload_encrypted(
            agency,
            [o for o in pop.objects if o.agency_id == agency],
            int(rng["keys"].integers(2**63)),
            record_wall_time=scenario.record_wall_time,
        )
        enc_cost.extend(res.cost_table)
        n_keys += len(res.ledger)

    kdb = build_kdb(pop)
    truth_all = np.array([pop.labels[r.request_id] for r in pop.requests])
    test_mask = stratified_split(truth_all, sum(scenario.buckets), rng["split"])
    train_reqs = [r for r, m in zip(pop.requests, test_mask) if not m]
    test_reqs = [r for r, m in zip(pop.requests, test_mask) if m]

    warnings = []
    for name, ys in (("training", truth_all[~test_mask]), ("test", truth_all[test_mask])):
        if ys.all() or not ys.any():
            warnings.append(f"degenerate {name} split: every request labelled {'malicious' if ys.any() else 'benign'}")

    arch = QfnnArchitecture.from_mode(cfg.qubit_mode)
    model, loss_trace, retrain_losses = None, [], []
    if scenario.use_qfnn:
        pairs, _, _ = _training_pairs(train_reqs, pop.labels, kdb, params, catalog, arch)
        if not pairs:
            raise HarnessError("no usable training requests")
        init_seed = int(rng["model"].integers(2**31))
        model, loss_trace = train(QfnnNetwork.initialize(arch, init_seed, cfg.depth), pairs, cfg)

    def retrain():
        nonlocal model
        pairs, _, _ = _training_pairs(train_reqs, pop.labels, kdb, params, catalog, arch)
        model, tr = train(model, pairs, cfg)
        retrain_losses.append(tr[-1])

    decisions, bucket_rows = [], []
    every = scenario.retrain_every
    start = processed = 0
    for b, size in enumerate(scenario.buckets):
        if scenario.use_qfnn and every is None and b > 0:
            retrain()
        chunk = test_reqs[start : start + size]
        recs = []
        for req in chunk:
            if scenario.use_qfnn and every is not None and processed and processed % every == 0:
                retrain()
            recs.append(process_request(req, kdb, model, params, catalog=catalog, use_qfnn=scenario.use_qfnn))
            processed += 1
        c = confusion([not r.granted for r in recs], [pop.labels[r.request_id] for r in chunk])
        bucket_rows.append({"bucket": _bucket_label(size, b), "requests": len(chunk), **c, "accuracy": accuracy_of(c)})
        decisions.extend(recs)
        start += size
        if progress:
            progress(bucket_rows[-1])

    total = confusion([not r.granted for r in decisions], [pop.labels[r.request_id] for r in decisions])
    outcomes = Counter(r.outcome for r in decisions)
    counts = {
        "requests": len(decisions),
        "training_requests": len(train_reqs),
        "grants": outcomes.get(GRANT, 0),
        "denials": outcomes.get(DENY, 0),
        "auth_rejected": outcomes.get(AUTH_REJECTED, 0),
        "objects_uploaded": len(pop.objects),
        "keys_issued": n_keys,
        "agents": {c.value: sum(1 for v in pop.categories.values() if v is c) for c in Category},
        "masked_agents": len(pop.masked),
    }
    return SimulationReport(
        seed=scenario.seed,
        scenario=scenario.to_dict(),
        buckets=bucket_rows,
        overall={"bucket": "overall", "requests": len(decisions), **total, "accuracy": accuracy_of(total)},
        loss_trace=loss_trace,
        retrain_losses=retrain_losses,
        decisions=decisions,
        enc_cost=enc_cost,
        key_randomness=key_randomness_table(int(rng["randomness"].integers(2**63))),
        counts=counts,
        warnings=warnings,
    )


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_reports(report: SimulationReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {n: out / n for n in ("accuracy.csv", "confusion.csv", "loss_trace.csv", "enc_cost.csv", "key_randomness.csv", "report.json")}
        ref = REFERENCE["accuracy"]
        rows = report.buckets + [report.overall]
        write_csv(
            paths["accuracy.csv"],
            ["bucket", "requests", "correct", "accuracy", "reference_accuracy"],
            [[r["bucket"], r["requests"], r["tp"] + r["tn"], r["accuracy"], ref.get(r["bucket"], "")] for r in rows],
        )
        write_csv(paths["confusion.csv"], ["bucket", "tp", "fp", "tn", "fn"], [[r["bucket"], r["tp"], r["fp"], r["tn"], r["fn"]] for r in rows])
        write_csv(paths["loss_trace.csv"], ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(report.loss_trace)])
        cols = ["dataset", "instances", "blocks", "gate_ops", "reference_ms"]
        if any("wall_ms" in r for r in report.enc_cost):
            cols.append("wall_ms")
        write_csv(paths["enc_cost.csv"], cols, [["" if r.get(c) is None else r.get(c) for c in cols] for r in report.enc_cost])
        write_csv(paths["key_randomness.csv"], ["key", "count", "probability"], [[r["key"], r["count"], r["probability"]] for r in report.key_randomness])
        with open(paths["report.json"], "w", newline="\n") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise HarnessError(f"cannot write reports to {out}: {exc}") from None
    return list(paths.values())


# CSV access-log ingestion ---------------------------------------------------

LOG_KINDS = ("history", "attempt", "request")


@dataclass(frozen=True)
class LogSchema:
    """Column names of an access-log CSV. ``kind`` picks how a row is read."""

    kind: str = "kind"
    user_id: str = "user_id"
    time: str = "time"
    dataset_ids: str = "dataset_ids"
    units: str = "units"
    leaked: str = "leaked"
    credentials: str = "credentials"
    profession: str = "profession"
    request_id: str = "request_id"
    request_type: str = "request_type"
    request_channel: str = "request_channel"
    data_amount: str = "data_amount"
    list_separator: str = ";"

    @property
    def required(self) -> tuple[str, ...]:
        return (self.kind, self.user_id, self.time, self.dataset_ids)


DEFAULT_LOG_SCHEMA = LogSchema()


@dataclass
class IngestResult:
    profiles: dict[str, UserProfile]
    requests: list[AccessRequest]
    errors: list[dict]  # {"row", "field", "message"}; rows count from 1 after the header
    rows: int


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in TRUE_WORDS:
        return True
    if t in FALSE_WORDS or t == "":
        return False
    raise ValueError(f"not a boolean: {text!r}")


def ingest_csv(path: str | Path, schema: LogSchema = DEFAULT_LOG_SCHEMA) -> IngestResult:
    profiles: dict[str, UserProfile] = {}
    requests: list[AccessRequest] = []
    errors: list[dict] = []
    n = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return IngestResult(profiles, requests, errors, 0)
        missing = [c for c in schema.required if c not in reader.fieldnames]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        for n, row in enumerate(reader, start=1):
            def get(col, default=""):
                v = row.get(getattr(schema, col))
                return default if v is None or v == "" else v

            current = col = None
            try:
                col = "kind"
                kind = get("kind").strip().lower()
                if kind not in LOG_KINDS:
                    raise ValueError(f"unknown kind {kind!r}")
                col = "user_id"
                uid = get("user_id").strip()
                if not uid:
                    raise ValueError("empty user id")
                col = "time"
                t = float(get("time"))
                col = "dataset_ids"
                datasets = tuple(d.strip() for d in get("dataset_ids").split(schema.list_separator) if d.strip())
                if not datasets:
                    raise ValueError("no dataset ids")
                if kind == "request":
                    col = "data_amount"
                    amount = float(get("data_amount", "1.0"))
                    current = AccessRequest(
                        request_id=get("request_id", f"row{n}"),
                        user_id=uid,
                        requested_datasets=datasets,
                        credentials=get("credentials"),
                        profession=get("profession", "unknown"),
                        request_type=get("request_type", "read"),
                        request_channel=get("request_channel", "portal"),
                        data_amount=amount,
                        timestamp=t,
                    )
                else:
                    col = "units"
                    units = int(get("units", "1"))
                    if units < 1:
                        raise ValueError("units must be >= 1")
                    col = "leaked"
                    leaked = _bool(get("leaked"))
            except ValueError as exc:
                errors.append({"row": n, "field": getattr(schema, col), "message": str(exc)})
                continue
            if kind == "request":
                requests.append(current)
                continue
            prof = profiles.get(uid)
            if prof is None:
                prof = profiles[uid] = UserProfile(uid, get("credentials"), profession=get("profession", "unknown"))
            if kind == "history":
                for ds in datasets:
                    prof.record_access(AccessEvent(t, ds, units), leaked)
            else:
                prof.unauthorized_attempts.extend((t, ds) for ds in datasets)
    return IngestResult(profiles, requests, errors, n)
