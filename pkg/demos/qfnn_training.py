"""
Training the QFNN screen
========================

The screen maps thresholded risk features to a basis state and learns to send
malicious inputs to |1...1>. Compare the 2-qubit and 4-qubit layouts on a
separable toy set, then read off a shot-noise confidence bound.
"""
import numpy as np

from qsecure.qfnn import (
    ConfidenceQuery,
    QfnnArchitecture,
    TrainingConfig,
    loss,
    misclassification_probability,
    pairs_from_features,
    predict,
    separable_toy_set,
    train,
)

x, y = separable_toy_set(200, seed=7)
print(f"{len(y)} rows, {y.mean():.2f} malicious")

###############################################################################
# Loss curves
# -----------

nets = {}
for mode in ("2Q", "4Q"):
    cfg = TrainingConfig(epochs=100, qubit_mode=mode)
    data = pairs_from_features(x, y, QfnnArchitecture.from_mode(mode))
    net, trace = train(cfg.initial_network(), data, cfg)
    nets[mode] = net
    marks = [trace[i] for i in (0, 9, 24, 49, 99)]
    print(mode, " ".join(f"{v:.4f}" for v in marks), "final", f"{loss(net, data):.2e}")

###############################################################################
# Predictions and the shot-noise bound
# ------------------------------------
# With 300 shots a score of 0.9 is almost never read back as benign.

for row, label in zip(x[:5], y[:5]):
    decision, score = predict(nets["4Q"], row)
    print(np.round(row, 2), bool(label), decision.value, f"{score:.3f}")

for p in (0.55, 0.7, 0.9):
    q = ConfidenceQuery(p_hat=p, shots=300)
    print(f"p_hat={p}: flip probability {misclassification_probability(q):.2e}")
