import math

import numpy as np
import pytest
from scipy.stats import norm

from qsecure.qfnn import (
    ConfidenceQuery,
    QfnnArchitecture,
    QfnnError,
    QfnnNetwork,
    TrainingConfig,
    TrainingError,
    TrainingPair,
    apply_layer_channel,
    cost,
    encode_features,
    feedforward,
    feedforward_unitaries,
    gradient,
    label_pair,
    layer_gates,
    loss,
    misclassification_probability,
    pairs_from_features,
    predict,
    separable_toy_set,
    train,
)
from qsecure.quantum import CNOT, DensityMatrix, StateVector, circuit_unitary, fidelity, partial_trace
from qsecure.scoring import Decision

HALF_PI = math.pi / 2


def transfer_network():
    """[1,1] template network that moves the input qubit onto the output wire.

    CNOT(0,1) . (H x H) . CNOT(0,1) . (H x H) with H = RZ(pi) RY(-pi/2).
    """
    arch = QfnnArchitecture((1, 1))
    p = np.zeros((3, 2, 2))
    p[1, 0, :] = p[2, 0, :] = -HALF_PI
    p[1, 1, :] = p[2, 1, :] = math.pi
    return QfnnNetwork(arch, p.reshape(-1))


def mixing_network():
    """[1,1] network whose output is I/2 for either basis input."""
    p = np.zeros((3, 2, 2))
    p[0, 0, 0] = HALF_PI  # RY on the input wire before the first CNOT
    p[1, 0, 1] = HALF_PI  # RY on the output wire between the CNOTs
    return QfnnNetwork(QfnnArchitecture((1, 1)), p.reshape(-1))


def random_pure(n, rng):
    return StateVector.random(n, rng)


class TestArchitecture:
    def test_modes(self):
        assert QfnnArchitecture.from_mode("2Q").layer_widths == (1, 1)
        assert QfnnArchitecture.from_mode("4Q").layer_widths == (2, 2)

    @pytest.mark.parametrize("widths", [(1,), (0, 1), (7, 6)])
    def test_invalid(self, widths):
        with pytest.raises(QfnnError):
            QfnnArchitecture(widths)

    def test_parameter_count(self):
        net = QfnnNetwork.initialize(QfnnArchitecture((2, 3, 1)), seed=0)
        # layers on 5 and 4 qubits, 2 rotations x 3 blocks per qubit
        assert net.n_parameters == 6 * 5 + 6 * 4
        with pytest.raises(QfnnError):
            QfnnNetwork(net.architecture, np.zeros(3))

    def test_layer_unitaries_are_unitary(self):
        net = QfnnNetwork.initialize(QfnnArchitecture((2, 3, 1)), seed=1)
        for u in net.layer_unitaries():
            np.testing.assert_allclose(u @ u.conj().T, np.eye(u.shape[0]), atol=1e-9)

    def test_depth_one_template(self):
        gates = layer_gates(np.zeros(8), 2, depth=1)
        assert [g.kind.value for g in gates] == ["RY", "RZ", "RY", "RZ", "CNOT", "RY", "RZ", "RY", "RZ"]

    def test_model_file(self, tmp_path):
        net = QfnnNetwork.initialize("4Q", seed=3)
        net.save(tmp_path / "model.json")
        back = QfnnNetwork.load(tmp_path / "model.json")
        np.testing.assert_array_equal(back.parameters, net.parameters)
        d = back.to_dict()
        assert set(d) >= {"layer_widths", "parameters", "gate_template_version", "seed"}
        d["gate_template_version"] = "something-else"
        with pytest.raises(QfnnError):
            QfnnNetwork.from_dict(d)


class TestFeedforward:
    def test_identity_parameters(self):
        net = QfnnNetwork(QfnnArchitecture((1, 1)), np.zeros(12))
        out = feedforward(net, StateVector.zero(1))
        assert len(out) == 1
        np.testing.assert_allclose(out[0].matrix, [[1, 0], [0, 0]], atol=1e-12)

    def test_swap_from_three_cnots(self):
        swap = circuit_unitary([CNOT(0, 1), CNOT(1, 0), CNOT(0, 1)], 2)
        psi = random_pure(1, np.random.default_rng(0))
        out = feedforward_unitaries([swap], (1, 1), psi.density_matrix().matrix)[-1]
        np.testing.assert_allclose(out, psi.density_matrix().matrix, atol=1e-12)

    def test_template_transfer(self):
        psi = random_pure(1, np.random.default_rng(1))
        out = feedforward(transfer_network(), psi)[-1]
        assert fidelity(psi, out) == pytest.approx(1.0, abs=1e-12)

    def test_channel_validity_random(self):
        rng = np.random.default_rng(2)
        for seed in range(10):
            net = QfnnNetwork.initialize(QfnnArchitecture((2, 1)), seed=seed)
            out = feedforward(net, random_pure(2, rng))[-1]
            assert abs(np.trace(out.matrix) - 1) < 1e-10
            assert out.is_valid(1e-9)

    def test_layer_matches_partial_trace(self):
        # independent route: build the joint state and trace with the core routine
        rng = np.random.default_rng(3)
        net = QfnnNetwork.initialize(QfnnArchitecture((2, 1)), seed=4)
        rho = DensityMatrix.random(2, rng)
        u = net.layer_unitaries()[0]
        joint = rho.tensor(StateVector.zero(1).density_matrix()).evolve(u)
        expected = partial_trace(joint, [0, 1]).matrix
        np.testing.assert_allclose(apply_layer_channel(rho.matrix, u, 2, 1), expected, atol=1e-12)

    def test_multi_layer_lengths(self):
        net = QfnnNetwork.initialize(QfnnArchitecture((2, 3, 1)), seed=5)
        outs = feedforward(net, StateVector.zero(2))
        assert [o.n_qubits for o in outs] == [3, 1]

    def test_dimension_mismatch(self):
        with pytest.raises(QfnnError):
            feedforward(QfnnNetwork.initialize("4Q", 0), StateVector.zero(1))


class TestCost:
    def test_perfect_copy(self):
        rng = np.random.default_rng(6)
        data = [TrainingPair(p, p) for p in (random_pure(1, rng) for _ in range(5))]
        assert cost(transfer_network(), data) == pytest.approx(1.0, abs=1e-12)
        assert loss(transfer_network(), data) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_targets(self):
        data = [TrainingPair(StateVector.from_bits(b), StateVector.from_bits("1" if b == "0" else "0"))
                for b in "01"]
        assert cost(transfer_network(), data) == pytest.approx(0.0, abs=1e-12)

    def test_maximally_mixed_outputs(self):
        net = mixing_network()
        for b in "01":
            np.testing.assert_allclose(feedforward(net, StateVector.from_bits(b))[-1].matrix, np.eye(2) / 2, atol=1e-12)
        rng = np.random.default_rng(7)
        data = [TrainingPair(StateVector.from_bits(str(i % 2)), random_pure(1, rng)) for i in range(400)]
        # any pure target against I/2 has fidelity exactly 1/2
        assert cost(net, data) == pytest.approx(0.5, abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(8)
        arch = QfnnArchitecture((2, 2))
        for seed in range(10):
            data = [TrainingPair(random_pure(2, rng), random_pure(2, rng)) for _ in range(5)]
            assert 0.0 <= cost(QfnnNetwork.initialize(arch, seed), data) <= 1.0

    def test_grouping_matches_per_pair_average(self):
        rng = np.random.default_rng(9)
        net = QfnnNetwork.initialize("4Q", seed=2)
        inputs = [StateVector.from_bits(b) for b in ("00", "01", "11")]
        data = [TrainingPair(inputs[int(rng.integers(3))], random_pure(2, rng)) for _ in range(30)]
        direct = np.mean([fidelity(p.target_state, feedforward(net, p.input_state)[-1]) for p in data])
        assert cost(net, data) == pytest.approx(direct, abs=1e-12)

    def test_empty(self):
        with pytest.raises(QfnnError):
            cost(transfer_network(), [])


def reference_loss(net, data):
    total = 0.0
    for pair in data:
        rho = pair.input_state.density_matrix().matrix
        for l, u in enumerate(net.layer_unitaries()):
            m_prev, m_out = net.architecture.layer_widths[l], net.architecture.layer_widths[l + 1]
            joint = DensityMatrix(np.kron(rho, StateVector.zero(m_out).density_matrix().matrix), check=False)
            rho = partial_trace(joint.evolve(u), range(m_prev)).matrix
        v = pair.target_state.amplitudes
        total += np.real(np.vdot(v, rho @ v))
    return 1 - total / len(data)


class TestGradient:
    def test_stationary_at_perfect_fit(self):
        rng = np.random.default_rng(10)
        data = [TrainingPair(p, p) for p in (random_pure(1, rng) for _ in range(4))]
        assert np.linalg.norm(gradient(transfer_network(), data)) < 1e-6

    def test_single_parameter_two_point_oracle(self):
        rng = np.random.default_rng(11)
        net = QfnnNetwork.initialize("2Q", seed=3)
        data = [TrainingPair(random_pure(1, rng), random_pure(1, rng)) for _ in range(3)]
        g = gradient(net, data, fd_step=1e-2)
        for j in (0, 5, 9):
            plus = net.parameters.copy()
            minus = net.parameters.copy()
            plus[j] += 1e-2
            minus[j] -= 1e-2
            expected = (reference_loss(net.with_parameters(plus), data)
                        - reference_loss(net.with_parameters(minus), data)) / 2e-2
            assert g[j] == pytest.approx(expected, abs=1e-10)

    def test_unused_parameters(self):
        # final rotations on the previous-layer wire act after the last CNOT and are traced out
        rng = np.random.default_rng(12)
        net = QfnnNetwork.initialize("2Q", seed=4)
        data = [TrainingPair(random_pure(1, rng), random_pure(1, rng)) for _ in range(3)]
        g = gradient(net, data).reshape(3, 2, 2)
        np.testing.assert_allclose(g[2, :, 0], 0.0, atol=1e-8)
        assert np.abs(g[2, :, 1]).max() > 1e-6

    def test_step_halving(self):
        rng = np.random.default_rng(13)
        arch = QfnnArchitecture((2, 1))
        for seed in range(5):
            net = QfnnNetwork.initialize(arch, seed)
            data = [TrainingPair(random_pure(2, rng), random_pure(1, rng)) for _ in range(3)]
            g1 = gradient(net, data, 1e-2)
            g2 = gradient(net, data, 5e-3)
            np.testing.assert_allclose(g1, g2, rtol=0.05, atol=1e-10)

    def test_bad_step(self):
        with pytest.raises(QfnnError):
            gradient(transfer_network(), [TrainingPair(StateVector.zero(1), StateVector.zero(1))], 0.0)


@pytest.fixture(scope="module")
def toy():
    return separable_toy_set(120, seed=1)


class TestTrain:
    def test_trace_length_and_determinism(self, toy):
        cfg = TrainingConfig(epochs=15, qubit_mode="2Q", seed=2)
        data = pairs_from_features(*toy, QfnnArchitecture.from_mode("2Q"))
        net1, tr1 = train(cfg.initial_network(), data, cfg)
        net2, tr2 = train(cfg.initial_network(), data, cfg)
        assert len(tr1) == 15 and tr1 == tr2
        np.testing.assert_array_equal(net1.parameters, net2.parameters)

    def test_zero_learning_rate(self, toy):
        cfg = TrainingConfig(epochs=5, learning_rate=0.0, qubit_mode="2Q")
        data = pairs_from_features(*toy, QfnnArchitecture.from_mode("2Q"))
        _, tr = train(cfg.initial_network(), data, cfg)
        assert max(tr) - min(tr) < 1e-15

    @pytest.mark.parametrize("mode", ["2Q", "4Q"])
    def test_loss_drops(self, toy, mode):
        cfg = TrainingConfig(epochs=60, qubit_mode=mode, seed=0)
        data = pairs_from_features(*toy, QfnnArchitecture.from_mode(mode))
        net, tr = train(cfg.initial_network(), data, cfg)
        assert tr[-1] < 0.35 * tr[0]
        assert loss(net, data) <= tr[-1] + 1e-9

    def test_moving_average_trend(self, toy):
        cfg = TrainingConfig(epochs=100, qubit_mode="4Q", seed=0)
        data = pairs_from_features(*toy, QfnnArchitecture.from_mode("4Q"))
        _, tr = train(cfg.initial_network(), data, cfg)
        ma = np.convolve(tr, np.ones(10) / 10, mode="valid")
        # Adam rings at the 1e-3 level once the loss has collapsed
        assert (np.diff(ma[10:]) <= 5e-3).all()
        assert ma[-1] < 0.1 * ma[0]

    def test_non_finite_aborts(self, toy):
        cfg = TrainingConfig(epochs=2, qubit_mode="2Q", learning_rate=float("nan"))
        data = pairs_from_features(*toy, QfnnArchitecture.from_mode("2Q"))
        with pytest.raises(TrainingError):
            train(cfg.initial_network(), data, cfg)

    @pytest.mark.parametrize(
        "kwargs", [{"epochs": 0}, {"adam_beta1": 1.0}, {"fd_step": 0.0}, {"qubit_mode": "3Q"}]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(QfnnError):
            TrainingConfig(**kwargs)


class TestPredict:
    def test_encoding(self):
        assert encode_features([0.1, 0.9, 0.2, 0.0, 0.3, 0.4], 2).basis_bits() == "10"
        assert encode_features([0.1, 0.2, 0.2, 0.0, 0.3, 0.6], 1).basis_bits() == "1"
        assert encode_features([0, 1, 0], 3).basis_bits() == "010"
        with pytest.raises(QfnnError):
            encode_features([0.1], 2)

    def test_trained_all_risk(self):
        arch = QfnnArchitecture((2, 1))
        data = [label_pair(np.full(6, float(b)), bool(b), arch) for b in (0, 1)] * 5
        cfg = TrainingConfig(epochs=80, qubit_mode="2Q", seed=1)
        net, _ = train(QfnnNetwork.initialize(arch, 1), data, cfg)
        label, score = predict(net, np.ones(6))
        assert label is Decision.MALICIOUS and score > 0.9

    def test_untrained_identity(self):
        net = QfnnNetwork(QfnnArchitecture((1, 1)), np.zeros(12))
        label, score = predict(net, np.zeros(6))
        assert label is Decision.NON_MALICIOUS and score == 0.0

    def test_score_range(self):
        rng = np.random.default_rng(14)
        net = QfnnNetwork.initialize("4Q", seed=5)
        for x in rng.uniform(0, 1, size=(1000, 6)):
            _, score = predict(net, x)
            assert 0.0 <= score <= 1.0

    def test_wrong_length(self):
        with pytest.raises(QfnnError):
            predict(QfnnNetwork.initialize("4Q", 0), np.zeros(5), n_features=6)


class TestMisclassification:
    def test_at_threshold(self):
        assert misclassification_probability(ConfidenceQuery(0.5, 300)) == pytest.approx(0.5)

    def test_confident_estimate(self):
        p = misclassification_probability(ConfidenceQuery(0.9, 300))
        # oracle: z = sqrt(300) * (0.5 - 0.9) / sqrt(2 * 0.9 * 0.1)
        z = math.sqrt(300) * -0.4 / math.sqrt(0.18)
        assert p < 1e-6
        assert p == pytest.approx(0.5 * math.erfc(-z / math.sqrt(2)), rel=1e-9)

    def test_monotone_in_shots(self):
        vals = [misclassification_probability(ConfidenceQuery(0.6, r)) for r in (100, 300, 1000, 3000, 10000)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_margin_and_label(self):
        q = ConfidenceQuery(0.6, 100, margin=0.2, y=-1)
        assert q.threshold == pytest.approx(0.6)
        assert misclassification_probability(q) == pytest.approx(0.5)
        assert misclassification_probability(ConfidenceQuery(0.3, 100, margin=0.2)) == pytest.approx(
            norm.cdf(10 * 0.1 / math.sqrt(2 * 0.3 * 0.7))
        )

    def test_degenerate(self):
        assert misclassification_probability(ConfidenceQuery(1.0, 10)) == 0.0
        assert misclassification_probability(ConfidenceQuery(0.0, 10)) == 1.0
        with pytest.raises(QfnnError):
            ConfidenceQuery(0.5, 0)
