import json
from dataclasses import replace

import numpy as np
import pytest

import qsecure.harness as hz
from qsecure.harness import (
    AUTH_REJECTED,
    DENY,
    GRANT,
    DataObject,
    HarnessError,
    IngestError,
    SimulationReport,
    SimulationScenario,
    build_kdb,
    confusion,
    accuracy_of,
    decrypt_bits,
    emit_reports,
    encrypt_bits,
    ingest_csv,
    key_randomness_table,
    process_request,
    run_simulation,
    stratified_split,
    synthesize_agents,
    upload_encrypted,
)
from qsecure.knowledge import KnowledgeDB, KnowledgeError
from qsecure.qfnn import QfnnArchitecture, QfnnNetwork, TrainingConfig
from qsecure.qotp import generate_key, pad_bits
from qsecure.scoring import AccessRequest, Category, Decision, RiskParams, UserProfile, score_request

SMALL = dict(agent_count=200, buckets=(50, 100, 150), qfnn_config=TrainingConfig(epochs=15))


def small(**kw):
    return SimulationScenario(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def small_report():
    return run_simulation(small(seed=11, auth_failure_rate=0.03))


@pytest.fixture(scope="module")
def benign_model():
    # zero parameters leave the fresh register in |00>, so every request looks benign
    arch = QfnnArchitecture.from_mode("4Q")
    return QfnnNetwork(arch, np.zeros(QfnnNetwork.initialize(arch, 0).n_parameters))


def rules_xi(pop):
    kdb = build_kdb(pop)
    out = []
    for r in pop.requests:
        res = score_request(r, kdb.profile(r.user_id), kdb.policy(r.user_id), RiskParams(), catalog=pop.catalog)
        out.append(res.xi_total)
    return np.array(out)


class TestScenario:
    def test_mix_must_sum_to_one(self):
        with pytest.raises(HarnessError):
            SimulationScenario(category_mix=(0.5, 0.3, 0.1))
        SimulationScenario(category_mix=(0.5, 0.3, 0.2 + 1e-12))

    @pytest.mark.parametrize("kw", [{"agent_count": 0}, {"label_noise": 1.5}, {"train_fraction": 1.0},
                                    {"buckets": ()}, {"retrain_every": 0}])
    def test_invalid(self, kw):
        with pytest.raises(HarnessError):
            SimulationScenario(**kw)

    def test_json_round_trip(self, tmp_path):
        sc = small(seed=3, retrain_every=40, risk_params=RiskParams(thr_risk=0.7))
        path = tmp_path / "s.json"
        path.write_text(json.dumps(sc.to_dict()))
        assert SimulationScenario.load(path) == sc

    def test_request_count(self):
        assert SimulationScenario().request_count == 10000
        assert small().request_count == 1000

    def test_unknown_field(self):
        with pytest.raises(HarnessError):
            SimulationScenario.from_dict({"agents": 3})

    def test_mix_keys_checked(self):
        with pytest.raises(HarnessError, match="malicious"):
            SimulationScenario.from_dict({"category_mix": {"malicious": 1.0}})


class TestSynthesis:
    def test_all_clean(self):
        pop = synthesize_agents(small(category_mix=(1, 0, 0), label_noise=0.0))
        assert (rules_xi(pop) == 0).all()
        assert not any(pop.labels.values())

    def test_all_risky(self):
        pop = synthesize_agents(small(category_mix=(0, 1, 0), label_noise=0.0))
        assert (rules_xi(pop) >= 1).all()
        assert all(pop.labels.values())

    def test_default_mix(self):
        pop = synthesize_agents(SimulationScenario(agent_count=2000))
        cats = list(pop.categories.values())
        for c, target in zip(Category, (0.6, 0.25, 0.15)):
            assert abs(cats.count(c) / 2000 - target) <= 0.02

    def test_masked_agents_look_clean(self):
        sc = small(category_mix=(0, 1, 0), label_noise=0.5)
        pop = synthesize_agents(sc)
        xi = dict(zip((r.request_id for r in pop.requests), rules_xi(pop)))
        assert 0.3 < len(pop.masked) / 200 < 0.7
        for r in pop.requests:
            assert (xi[r.request_id] == 0) == (r.user_id in pop.masked)

    def test_deterministic(self):
        a, b = synthesize_agents(small(seed=5)), synthesize_agents(small(seed=5))
        assert [r.to_dict() for r in a.requests] == [r.to_dict() for r in b.requests]
        assert a.labels == b.labels
        c = synthesize_agents(small(seed=6))
        assert [r.to_dict() for r in a.requests] != [r.to_dict() for r in c.requests]

    def test_requests_time_ordered_after_window(self):
        pop = synthesize_agents(small())
        t = [r.timestamp for r in pop.requests]
        assert t == sorted(t) and min(t) >= 100.0

    def test_unknown_agents_unregistered(self):
        pop = synthesize_agents(small())
        unknown = {u for u, c in pop.categories.items() if c is Category.UNKNOWN}
        assert unknown and not unknown & set(pop.profiles)


class TestUpload:
    def objects(self, n=3, agency="agency-x"):
        rng = np.random.default_rng(0)
        return [DataObject(f"o{i}", agency, "surveillance", "".join(rng.choice(["0", "1"], size=8 + i))) for i in range(n)]

    def test_single_object(self):
        res = upload_encrypted("agency-x", self.objects(1), seed=1)
        assert len(res.rows) == 1 and len(res.ledger) == 1

    def test_round_trip(self):
        objs = self.objects(5)
        res = upload_encrypted("agency-x", objs, seed=2)
        for o, row in zip(objs, res.rows):
            assert decrypt_bits(row.payload, res.ledger.get(row.key_id)) == o.payload_bits

    def test_cost_table_shape(self):
        res = upload_encrypted("agency-x", self.objects(2), seed=3)
        assert [r["instances"] for r in res.cost_table] == [5, 10, 15, 20, 25]
        assert all(r["reference_ms"] is not None for r in res.cost_table)
        ops = [r["gate_ops"] for r in res.cost_table]
        assert ops == sorted(ops)

    def test_wall_time_optional(self):
        res = upload_encrypted("agency-x", self.objects(2), seed=3, record_wall_time=True)
        assert all(r["wall_ms"] > 0 for r in res.cost_table)

    def test_duplicates_and_ownership(self):
        objs = self.objects(2)
        with pytest.raises(HarnessError):
            upload_encrypted("agency-x", objs + objs[:1], seed=0)
        with pytest.raises(HarnessError):
            upload_encrypted("agency-y", objs, seed=0)

    def test_blockwise_matches_classical_pad(self):
        bits = "1101001110010110101"
        key = generate_key(len(bits), 9)
        assert encrypt_bits(bits, key) == pad_bits(bits, key)

    def test_data_object_validation(self):
        with pytest.raises(HarnessError):
            DataObject("o", "a", "c", "")
        with pytest.raises(HarnessError):
            DataObject("o", "a", "c", "01", sensitivity="medium")


class TestKnowledgeDB:
    def test_persistence(self, tmp_path):
        pop = synthesize_agents(small())
        kdb = build_kdb(pop)
        r = next(r for r in pop.requests if r.user_id in pop.profiles)
        kdb.log_request(r)
        kdb.grant(r)
        kdb.save(tmp_path)
        back = KnowledgeDB.load(tmp_path)
        assert back.user_ids == kdb.user_ids
        assert back.allocated(r.user_id) == r.requested_datasets
        assert back.live_details(r.request_id) == r.to_dict()
        assert back.profile(r.user_id).to_dict() == kdb.profile(r.user_id).to_dict()

    def test_contracts(self):
        kdb = KnowledgeDB()
        kdb.register(UserProfile("u", "pw"))
        with pytest.raises(KnowledgeError):
            kdb.register(UserProfile("u", "pw"))
        req = AccessRequest("r", "u", ("d",), "pw")
        with pytest.raises(KnowledgeError):
            kdb.grant(req)
        kdb.log_request(req)
        with pytest.raises(KnowledgeError):
            kdb.log_request(req)

    def test_missing_file(self, tmp_path):
        with pytest.raises(KnowledgeError):
            KnowledgeDB.load(tmp_path)


class TestProcessRequest:
    @pytest.fixture
    def world(self):
        pop = synthesize_agents(small(category_mix=(1, 0, 0), label_noise=0.0))
        return pop, build_kdb(pop)

    def test_clean_grant(self, world, benign_model):
        pop, kdb = world
        r = pop.requests[0]
        before = len(kdb.allocated(r.user_id))
        rec = process_request(r, kdb, benign_model, RiskParams(), catalog=pop.catalog)
        assert rec.outcome == GRANT and rec.xi_total == 0
        assert len(kdb.allocated(r.user_id)) == before + len(r.requested_datasets)

    def test_illegal_request_denied(self, world, benign_model):
        pop, kdb = world
        r = pop.requests[0]
        outside = sorted(pop.catalog - kdb.policy(r.user_id).authorized)[0]
        bad = replace(r, request_id="bad", requested_datasets=(outside,))
        attempts = len(kdb.profile(r.user_id).unauthorized_attempts)
        rec = process_request(bad, kdb, benign_model, RiskParams(), catalog=pop.catalog)
        assert rec.outcome == DENY and rec.reason == "rules"
        assert rec.qfnn_label == Decision.NON_MALICIOUS.value
        assert kdb.allocated(r.user_id) == ()
        assert len(kdb.profile(r.user_id).unauthorized_attempts) == attempts + 1
        assert kdb.prevented[-1]["request_id"] == "bad"

    def test_auth_failure_skips_model(self, world, benign_model, monkeypatch):
        pop, kdb = world
        r = replace(pop.requests[0], credentials="wrong")

        def boom(*a, **k):
            raise AssertionError("model consulted")

        monkeypatch.setattr(hz, "predict", boom)
        rec = process_request(r, kdb, benign_model, RiskParams())
        assert rec.outcome == AUTH_REJECTED and rec.qfnn_score is None

    def test_replay_is_deterministic(self, world):
        pop, kdb = world
        model = QfnnNetwork.initialize("4Q", seed=4)
        r = pop.requests[3]
        a = process_request(r, kdb.snapshot(), model, RiskParams())
        b = process_request(r, kdb.snapshot(), model, RiskParams())
        assert a == b

    def test_new_user_registered(self, benign_model):
        kdb = KnowledgeDB()
        rec = process_request(AccessRequest("r", "stranger", ("d",), "pw"), kdb, benign_model, RiskParams())
        assert "stranger" in kdb and rec.outcome == DENY

    def test_model_required(self, world):
        pop, kdb = world
        with pytest.raises(HarnessError):
            process_request(pop.requests[0], kdb, None, RiskParams())


class TestSimulation:
    def test_conservation(self, small_report):
        c = small_report.counts
        assert c["grants"] + c["denials"] + c["auth_rejected"] == c["requests"] == 300
        assert c["auth_rejected"] > 0

    def test_decision_totality(self, small_report):
        for d in small_report.decisions:
            if d.outcome == GRANT:
                assert d.rule_decision == "non_malicious" and d.qfnn_label == "non_malicious"
            elif d.outcome == DENY:
                assert "malicious" in (d.rule_decision, d.qfnn_label)
                assert (d.xi_total >= 1) == (d.rule_decision == "malicious")

    def test_accuracy_recomputable(self, small_report):
        for row in small_report.buckets + [small_report.overall]:
            assert row["accuracy"] == accuracy_of(row)
            assert row["tp"] + row["fp"] + row["tn"] + row["fn"] == row["requests"]
        assert [b["bucket"] for b in small_report.buckets] == ["b0-50", "b1-100", "b2-150"]

    def test_report_shape(self, small_report):
        assert len(small_report.loss_trace) == 15
        assert len(small_report.retrain_losses) == 2
        assert sum(r["count"] for r in small_report.key_randomness) == 9600
        assert {r["dataset"] for r in small_report.enc_cost} == {"surveillance", "tcga", "diabetes"}

    def test_rules_only_closed_loop(self):
        rep = run_simulation(small(label_noise=0.0, use_qfnn=False, seed=2))
        assert rep.overall["accuracy"] == 1.0 and rep.loss_trace == []

    def test_reproducible(self, small_report):
        again = run_simulation(small(seed=11, auth_failure_rate=0.03))
        assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(small_report.to_dict(), sort_keys=True)

    def test_retrain_every(self):
        rep = run_simulation(small(seed=1, retrain_every=100, qfnn_config=TrainingConfig(epochs=3)))
        assert len(rep.retrain_losses) == 2

    def test_degenerate_split_reported(self):
        rep = run_simulation(small(category_mix=(1, 0, 0), use_qfnn=False))
        assert any("degenerate" in w for w in rep.warnings)

    def test_uadr_matches_grants(self):
        # append-only: every grant adds exactly its datasets, nothing else touches uadr
        sc = small(seed=4, use_qfnn=False)
        pop = synthesize_agents(sc)
        kdb = build_kdb(pop)
        grown = {}
        for r in pop.requests[:300]:
            rec = process_request(r, kdb, None, sc.risk_params, catalog=pop.catalog, use_qfnn=False)
            if rec.granted:
                grown.setdefault(r.user_id, []).extend(r.requested_datasets)
            assert kdb.allocated(r.user_id) == tuple(grown.get(r.user_id, ()))


class TestStratifiedSplit:
    def test_counts(self):
        y = np.array([True] * 300 + [False] * 700)
        m = stratified_split(y, 300, np.random.default_rng(0))
        assert m.sum() == 300 and y[m].sum() == 90

    def test_bad_size(self):
        with pytest.raises(HarnessError):
            stratified_split([True, False], 2, np.random.default_rng(0))


class TestEmit:
    def test_files_and_shapes(self, small_report, tmp_path):
        paths = emit_reports(small_report, tmp_path)
        assert sorted(p.name for p in paths) == sorted(
            ["accuracy.csv", "confusion.csv", "loss_trace.csv", "enc_cost.csv", "key_randomness.csv", "report.json"]
        )
        loss_rows = (tmp_path / "loss_trace.csv").read_text().splitlines()
        assert loss_rows[0] == "epoch,loss" and len(loss_rows) == 1 + 15
        keys = (tmp_path / "key_randomness.csv").read_text().splitlines()
        assert len(keys) == 33
        assert b"\r" not in (tmp_path / "accuracy.csv").read_bytes()

    def test_byte_stable(self, small_report, tmp_path):
        emit_reports(small_report, tmp_path / "a")
        emit_reports(SimulationReport.from_dict(json.loads((tmp_path / "a" / "report.json").read_text())), tmp_path / "b")
        for name in ("accuracy.csv", "confusion.csv", "loss_trace.csv", "enc_cost.csv", "key_randomness.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable(self, small_report, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(HarnessError):
            emit_reports(small_report, blocker / "out")


class TestKeyRandomness:
    def test_table(self):
        t = key_randomness_table(0, samples=640)
        assert [r["key"] for r in t] == [format(i, "05b") for i in range(32)]
        assert sum(r["count"] for r in t) == 640
        assert key_randomness_table(0, samples=640) == t


class TestConfusion:
    def test_example(self):
        c = confusion([True, True, False, False], [True, False, False, True])
        assert c == {"tp": 1, "fp": 1, "tn": 1, "fn": 1} and accuracy_of(c) == 0.5


HEADER = "kind,user_id,time,dataset_ids,units,leaked,credentials,data_amount,request_id\n"


class TestIngest:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        res = ingest_csv(p)
        assert (res.profiles, res.requests, res.errors, res.rows) == ({}, [], [], 0)

    def test_one_row(self, tmp_path):
        p = tmp_path / "one.csv"
        p.write_text(HEADER + "history,alice,12.5,d1;d2,2,no,pw,,\n")
        res = ingest_csv(p)
        assert list(res.profiles) == ["alice"] and not res.errors
        prof = res.profiles["alice"]
        assert [e.dataset_id for e in prof.interaction_history] == ["d1", "d2"]
        assert prof.credentials == "pw" and prof.leak_flags == [False, False]

    def test_malformed_rows_reported(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text(
            HEADER
            + "history,alice,1,d1,3,yes,pw,,\n"
            + "history,alice,2,d1,many,no,pw,,\n"
            + "attempt,alice,3,d9,1,,pw,,\n"
            + "request,bob,150,d1,,,pw,12.5,r1\n"
            + "teleport,bob,4,d1,1,,,,\n"
        )
        res = ingest_csv(p)
        assert [(e["row"], e["field"]) for e in res.errors] == [(2, "units"), (5, "kind")]
        assert res.rows == 5
        assert res.profiles["alice"].leak_flags == [True]
        assert res.profiles["alice"].unauthorized_attempts == [(3.0, "d9")]
        assert res.requests[0].request_id == "r1" and res.requests[0].data_amount == 12.5

    def test_missing_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("kind,user_id\nhistory,alice\n")
        with pytest.raises(IngestError):
            ingest_csv(p)
