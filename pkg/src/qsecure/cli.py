"""``qsecure`` command line.

Every run resolves a seed, writes ``manifest.json`` into the output directory
and only then does any work. Exit status: 0 ok, 1 bad usage or config, 2 bad
input data.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import secrets
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from .harness import (
    DataObject,
    HarnessError,
    SimulationReport,
    SimulationScenario,
    build_training_set,
    emit_reports,
    decrypt_bits,
    ingest_csv,
    process_request,
    run_simulation,
    synthesize_agents,
    upload_encrypted,
    build_kdb,
    write_csv,
)
from .knowledge import KnowledgeDB, KnowledgeError
from .qfnn import QUBIT_MODES, ConfidenceQuery, QfnnArchitecture, QfnnError, QfnnNetwork, TrainingError, misclassification_probability, pairs_from_features, train
from .qotp import EXHAUSTIVE_MAX_QUBITS, KeyLedger, generate_key, read_ciphertexts, verify_perfect_secrecy, write_ciphertexts
from .quantum import MAX_QUBITS, QuantumError, StateVector
from .records import SchemaError
from .scoring import AccessRequest, RiskParams, ScoringError

OUT_ENV = "QSECURE_OUT"
DEFAULT_OUT = "qsecure-out"
DATA_ERRORS = (HarnessError, KnowledgeError, QuantumError, QfnnError, TrainingError, ScoringError, SchemaError, OSError, json.JSONDecodeError, KeyError)


class ConfigError(ValueError):
    def __init__(self, name: str, message: str) -> None:
        super().__init__(f"invalid {name}: {message}")
        self.field = name


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@dataclass
class RunConfig:
    subcommand: str
    out_dir: Path
    seed: int
    seed_generated: bool = False
    inputs: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        return d


_INPUTS = ("scenario", "objects", "ciphertexts", "keys", "csv", "request", "kdb", "model", "report")
_OVERRIDES = ("thr_risk", "epochs", "qubit_mode", "shots")


def validate_config(raw: dict) -> RunConfig:
    """Range-check a flat option dict (as produced by the parser)."""
    raw = dict(raw)
    sub = raw.pop("subcommand", None)
    if not sub:
        raise ConfigError("subcommand", "missing")
    if raw.get("thr_risk") is not None and not raw["thr_risk"] > 0:
        raise ConfigError("thr_risk", f"must be > 0, got {raw['thr_risk']}")
    if raw.get("epochs") is not None and raw["epochs"] < 1:
        raise ConfigError("epochs", f"must be >= 1, got {raw['epochs']}")
    if raw.get("qubit_mode") is not None and raw["qubit_mode"] not in QUBIT_MODES:
        raise ConfigError("qubit_mode", f"must be one of {sorted(QUBIT_MODES)}")
    if raw.get("shots") is not None and raw["shots"] < 1:
        raise ConfigError("shots", f"must be >= 1, got {raw['shots']}")
    if raw.get("qubits") is not None and not 1 <= raw["qubits"] <= MAX_QUBITS:
        raise ConfigError("qubits", f"must lie in 1..{MAX_QUBITS}")
    if raw.get("count") is not None and raw["count"] < 1:
        raise ConfigError("count", "must be >= 1")
    if raw.get("samples") is not None and raw["samples"] < 1:
        raise ConfigError("samples", "must be >= 1")
    if sub == "verify-secrecy" and raw.get("mode") == "exhaustive" and (raw.get("qubits") or 0) > EXHAUSTIVE_MAX_QUBITS:
        raise ConfigError("qubits", f"exhaustive mode supports at most {EXHAUSTIVE_MAX_QUBITS}")
    bits = raw.get("bits")
    if bits is not None and (not bits or set(bits) - {"0", "1"}):
        raise ConfigError("bits", "must be a non-empty bitstring")

    seed = raw.pop("seed", None)
    if seed is None and raw.get("scenario"):
        try:
            seed = json.loads(Path(raw["scenario"]).read_text()).get("seed")
        except (OSError, ValueError, AttributeError):
            seed = None  # the command itself reports the unreadable file
    generated = seed is None
    if generated:
        seed = secrets.randbelow(2**32)
    elif seed < 0:
        raise ConfigError("seed", "must be non-negative")
    out = raw.pop("out", None) or os.environ.get(OUT_ENV) or DEFAULT_OUT
    cfg = RunConfig(sub, Path(out), int(seed), generated)
    for k, v in raw.items():
        if v is None:
            continue
        if k in _INPUTS:
            cfg.inputs[k] = str(v)
        elif k in _OVERRIDES:
            cfg.overrides[k] = v
        else:
            cfg.options[k] = v
    return cfg


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("qsecure", "numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def write_manifest(cfg: RunConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / "manifest.json"
    path.write_text(json.dumps({"config": cfg.to_dict(), "seed": cfg.seed, "versions": _versions()}, sort_keys=True, indent=1) + "\n")
    return path


def _scenario(cfg: RunConfig) -> SimulationScenario:
    sc = SimulationScenario.load(cfg.inputs["scenario"]) if "scenario" in cfg.inputs else SimulationScenario()
    sc = sc.with_seed(cfg.seed)
    ov = cfg.overrides
    if "thr_risk" in ov:
        sc = replace(sc, risk_params=replace(sc.risk_params, thr_risk=ov["thr_risk"]))
    qc = sc.qfnn_config
    if "epochs" in ov:
        qc = replace(qc, epochs=ov["epochs"])
    if "qubit_mode" in ov:
        qc = replace(qc, qubit_mode=ov["qubit_mode"])
    if cfg.options.get("rules_only"):
        sc = replace(sc, use_qfnn=False)
    return replace(sc, qfnn_config=qc)


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _echo(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_keygen(cfg: RunConfig) -> None:
    n = cfg.options.get("qubits", 4)
    rng = np.random.default_rng(cfg.seed)
    ledger = KeyLedger()
    for i in range(cfg.options.get("count", 1)):
        ledger.add(generate_key(n, int(rng.integers(2**63)), key_id=f"key-{i:04d}"))
    ledger.save(cfg.out_dir / "keys.jsonl")
    for k in ledger.keys():
        print(k.key_id, k.alpha, k.beta)


def cmd_encrypt(cfg: RunConfig) -> None:
    if "objects" in cfg.inputs:
        objects = [DataObject(**d) for d in _read_jsonl(cfg.inputs["objects"])]
    elif "bits" in cfg.options:
        objects = [DataObject("record-0", "agency-cli", "adhoc", cfg.options["bits"])]
    else:
        raise ConfigError("objects", "give --objects FILE or --bits BITS")
    rows, ledger, costs = [], KeyLedger(), []
    rng = np.random.default_rng(cfg.seed)
    for agency in sorted({o.agency_id for o in objects}):
        res = upload_encrypted(agency, [o for o in objects if o.agency_id == agency], int(rng.integers(2**63)))
        rows += res.rows
        costs += res.cost_table
        for k in res.ledger.keys():
            ledger.add(k)
    write_ciphertexts(rows, cfg.out_dir / "ciphertexts.jsonl")
    ledger.save(cfg.out_dir / "keys.jsonl")
    write_csv(cfg.out_dir / "enc_cost.csv", ["dataset", "instances", "blocks", "gate_ops"],
               [[c["dataset"], c["instances"], c["blocks"], c["gate_ops"]] for c in costs])
    print(f"encrypted {len(rows)} records")


def cmd_decrypt(cfg: RunConfig) -> None:
    for name in ("ciphertexts", "keys"):
        if name not in cfg.inputs:
            raise ConfigError(name, "required")
    ledger = KeyLedger.load(cfg.inputs["keys"])
    out = []
    for row in read_ciphertexts(cfg.inputs["ciphertexts"]):
        if not isinstance(row.payload, str):
            raise HarnessError(f"{row.record_id}: only basis payloads can be decrypted here")
        out.append({"record_id": row.record_id, "bits": decrypt_bits(row.payload, ledger.get(row.key_id))})
    _write_jsonl(cfg.out_dir / "plaintexts.jsonl", out)
    for r in out:
        print(r["record_id"], r["bits"])


def cmd_verify_secrecy(cfg: RunConfig) -> None:
    n = cfg.options.get("qubits", 2)
    mode = cfg.options.get("mode", "exhaustive")
    if "bits" in cfg.options:
        state = StateVector.from_bits(cfg.options["bits"])
    else:
        state = StateVector.random(n, np.random.default_rng(cfg.seed))
    rep = verify_perfect_secrecy(state, mode=mode, samples=cfg.options.get("samples"), seed=cfg.seed)
    result = {"n_qubits": rep.n_qubits, "mode": mode, "keys_used": rep.keys_used, "deviation": rep.deviation}
    (cfg.out_dir / "secrecy.json").write_text(json.dumps(result, sort_keys=True) + "\n")
    print(f"deviation {rep.deviation:.3e} over {rep.keys_used} keys")


def cmd_synth(cfg: RunConfig) -> None:
    sc = _scenario(cfg)
    pop = synthesize_agents(sc)
    d = cfg.out_dir
    _write_jsonl(d / "objects.jsonl", [o.to_dict() for o in pop.objects])
    _write_jsonl(d / "requests.jsonl", [r.to_dict() for r in pop.requests])
    write_csv(d / "labels.csv", ["request_id", "user_id", "category", "malicious"],
               [[r.request_id, r.user_id, pop.categories[r.user_id].value, int(pop.labels[r.request_id])] for r in pop.requests])
    build_kdb(pop).save(d / "kdb")
    print(f"{len(pop.categories)} agents, {len(pop.requests)} requests, {len(pop.objects)} objects")


def cmd_ingest(cfg: RunConfig) -> None:
    if "csv" not in cfg.inputs:
        raise ConfigError("csv", "required")
    res = ingest_csv(cfg.inputs["csv"])
    kdb = KnowledgeDB()
    for p in res.profiles.values():
        kdb.register(p)
    kdb.save(cfg.out_dir / "kdb")
    _write_jsonl(cfg.out_dir / "requests.jsonl", [r.to_dict() for r in res.requests])
    (cfg.out_dir / "ingest_errors.json").write_text(json.dumps(res.errors, indent=1) + "\n")
    print(f"{res.rows} rows: {len(res.profiles)} profiles, {len(res.requests)} requests, {len(res.errors)} errors")


def cmd_train(cfg: RunConfig) -> None:
    sc = _scenario(cfg)
    qc = replace(sc.qfnn_config, seed=cfg.seed)
    x, y = build_training_set(sc)
    arch = QfnnArchitecture.from_mode(qc.qubit_mode)
    net, trace = train(qc.initial_network(), pairs_from_features(x, y, arch), qc)
    net.save(cfg.out_dir / "model.json")
    write_csv(cfg.out_dir / "loss_trace.csv", ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(trace)])
    print(f"loss {trace[0]:.4f} -> {trace[-1]:.4f} over {len(trace)} epochs")


def cmd_score(cfg: RunConfig) -> None:
    for name in ("request", "kdb"):
        if name not in cfg.inputs:
            raise ConfigError(name, "required")
    request = AccessRequest.from_dict(json.loads(Path(cfg.inputs["request"]).read_text()))
    kdb = KnowledgeDB.load(cfg.inputs["kdb"])
    rules_only = cfg.options.get("rules_only", False)
    model = None
    if not rules_only:
        if "model" not in cfg.inputs:
            raise ConfigError("model", "required unless --rules-only")
        model = QfnnNetwork.load(cfg.inputs["model"])
    params = RiskParams(thr_risk=cfg.overrides.get("thr_risk", RiskParams().thr_risk))
    rec = process_request(request, kdb, model, params, use_qfnn=not rules_only)
    out = rec.to_dict()
    if rec.qfnn_score is not None:
        # chance that a finite-shot estimate of the score lands on the other side of 1/2
        p = rec.qfnn_score if rec.qfnn_label == "malicious" else 1 - rec.qfnn_score
        out["misclassification_bound"] = misclassification_probability(ConfidenceQuery(p, cfg.overrides.get("shots", 300)))
    (cfg.out_dir / "decision.json").write_text(json.dumps(out, sort_keys=True, indent=1) + "\n")
    _echo(out)


def cmd_simulate(cfg: RunConfig) -> None:
    sc = _scenario(cfg)
    report = run_simulation(sc, progress=lambda row: print(f"bucket {row['bucket']}: accuracy {row['accuracy']:.4f}", file=sys.stderr))
    emit_reports(report, cfg.out_dir)
    print(f"overall accuracy {report.overall['accuracy']:.4f} on {report.overall['requests']} requests")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_report(cfg: RunConfig) -> None:
    if "report" not in cfg.inputs:
        raise ConfigError("report", "required")
    report = SimulationReport.from_dict(json.loads(Path(cfg.inputs["report"]).read_text()))
    for p in emit_reports(report, cfg.out_dir):
        print(p)


COMMANDS = {
    "keygen": cmd_keygen,
    "encrypt": cmd_encrypt,
    "decrypt": cmd_decrypt,
    "verify-secrecy": cmd_verify_secrecy,
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "score": cmd_score,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, help="master seed; generated and recorded when omitted")

    p = _Parser(prog="qsecure", description="Quantum-padded record storage and access screening simulator.")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser, metavar="COMMAND")

    s = sub.add_parser("keygen", parents=[common], help="draw QRNG padding keys")
    s.add_argument("--qubits", type=int, default=4, help="key width in qubits (default 4)")
    s.add_argument("--count", type=int, default=1, help="number of keys (default 1)")

    s = sub.add_parser("encrypt", parents=[common], help="pad records under fresh keys")
    s.add_argument("--objects", help="JSON-lines data objects, e.g. objects.jsonl from synth")
    s.add_argument("--bits", help="a single basis-encoded record")

    s = sub.add_parser("decrypt", parents=[common], help="undo the pad with the key ledger")
    s.add_argument("--ciphertexts", help="ciphertexts.jsonl")
    s.add_argument("--keys", help="keys.jsonl")

    s = sub.add_parser("verify-secrecy", parents=[common], help="average a state over pad keys")
    s.add_argument("--qubits", type=int, default=2, help="state width (default 2)")
    s.add_argument("--mode", choices=("exhaustive", "sampled"), default="exhaustive")
    s.add_argument("--samples", type=int, help="keys to draw in sampled mode")
    s.add_argument("--bits", help="use this basis state instead of a random one")

    for name, text in (("synth", "synthesize agents, objects and requests"), ("train", "train the QFNN screen"),
                       ("simulate", "run the full protocol and emit reports")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--scenario", help="scenario JSON (defaults apply when omitted)")
        s.add_argument("--thr-risk", dest="thr_risk", type=float, help="risk-factor threshold (default 0.5)")
        s.add_argument("--epochs", type=int, help="training epochs (default 100)")
        s.add_argument("--qubit-mode", dest="qubit_mode", help="2Q or 4Q (default 4Q)")
        if name == "simulate":
            s.add_argument("--rules-only", action="store_true", help="skip the QFNN screen")

    s = sub.add_parser("ingest", parents=[common], help="read an access-log CSV")
    s.add_argument("--csv", help="log file with kind,user_id,time,dataset_ids,... columns")

    s = sub.add_parser("score", parents=[common], help="screen one request against a knowledge base")
    s.add_argument("--request", help="request JSON")
    s.add_argument("--kdb", help="knowledge base directory (uhdr/uldr/uadr.jsonl)")
    s.add_argument("--model", help="model.json from train")
    s.add_argument("--rules-only", action="store_true")
    s.add_argument("--thr-risk", dest="thr_risk", type=float, help="risk-factor threshold (default 0.5)")
    s.add_argument("--shots", type=int, help="shots behind the confidence bound (default 300)")

    s = sub.add_parser("report", parents=[common], help="re-emit CSVs from a saved report.json")
    s.add_argument("--report", help="report.json")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.subcommand is None:
        parser.print_usage(sys.stderr)
        print("qsecure: error: a command is required", file=sys.stderr)
        return 1
    try:
        cfg = validate_config(vars(ns))
        write_manifest(cfg)
        COMMANDS[cfg.subcommand](cfg)
    except ConfigError as exc:
        print(f"qsecure: {exc}", file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"qsecure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
