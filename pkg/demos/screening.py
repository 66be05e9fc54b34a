"""
Rule-based screening of one user
================================

Walk a single user through the rule chain: novelty, request legality, and
the risk factor built from past leaks and refused attempts.
"""
from qsecure.scoring import (
    AccessEvent,
    AccessRequest,
    AuthorizationPolicy,
    PolicyEntry,
    RiskParams,
    UserProfile,
    feature_vector,
    score_request,
)

params = RiskParams(window=(0.0, 100.0), thr_risk=0.5)
policy = AuthorizationPolicy("dana", (PolicyEntry(2.0, ("tcga-001",)), PolicyEntry(1.0, ("diabetes-004", "diabetes-007"))))

###############################################################################
# A clean history
# ---------------

history = [AccessEvent(10.0 + 7 * i, "diabetes-004", units=2) for i in range(8)]
dana = UserProfile("dana", "s3cret", history, [False] * 8, category_label="non-malevolent")
req = AccessRequest("q1", "dana", ("tcga-001",), credentials="s3cret", data_amount=12.0)
res = score_request(req, dana, policy, params)
print("clean:", res.decision.value, "xi =", res.xi_total, "features", feature_vector(res, req, params))

###############################################################################
# Two leaks and three refused attempts
# ------------------------------------
# pi = 4/16 and fdb = 3, so rf = 0.75 crosses the 0.5 threshold.

dana.leak_flags[2] = dana.leak_flags[5] = True
dana.unauthorized_attempts += [(30.0, "tcga-099"), (44.0, "tcga-099"), (71.0, "tcga-100")]
res = score_request(req, dana, policy, params)
print("after leaks:", res.decision.value, f"pi={res.pi:.3f} fdb={res.fdb} rf={res.rf:.3f}")

###############################################################################
# Outside the policy
# ------------------

bad = AccessRequest("q2", "dana", ("tcga-099",), credentials="s3cret")
res = score_request(bad, dana, policy, params)
print("illegal request: ad_flag =", res.ad_flag, "xi =", res.xi_total)
