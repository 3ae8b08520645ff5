"""Smoke test of the Python bindings.

Build and install first:
    cd crates/python && maturin build --release && pip install ../../target/wheels/koopman_em-*.whl
"""

import math

import koopman_em as ke


def main():
    exact = ke.Model.slow_manifold(noise_var=1e-4)
    assert (exact.n, exact.q, exact.p) == (4, 1, 1)
    drift = sorted(lam.real for lam in exact.spectrum())
    assert all(abs(a - b) < 1e-9 for a, b in zip(drift, [-5, -3, -2, -1, 0])), drift

    again = ke.Model.from_json(exact.to_json())
    assert again.to_json() == exact.to_json()

    inputs = [[math.sin(0.1 * l)] for l in range(60)]
    states, outputs = exact.simulate([0.2, 0.5, 0.25, 0.125], inputs, seed=1)
    assert len(states) == 61 and len(outputs) == 61
    means, covs, ll = exact.smooth(inputs, outputs)
    assert len(means) == 61 and len(covs[0]) == 4 and math.isfinite(ll)
    mean, std = exact.forecast(inputs, outputs, 30)
    assert len(mean) == 31 and all(s[0] > 0 for s in std)

    data = ke.Dataset(exact.dt, 1, 1, [(inputs, outputs)])
    assert len(data) == 1
    init = ke.init_random(data, 2, seed=3, tau=0.1)
    res = ke.fit(data, init, max_iters=20)
    trace = res.loglik_trace
    assert all(b >= a - 1e-8 * (1 + abs(a)) for a, b in zip(trace, trace[1:])), trace
    assert res.model.n == 2

    u, cost = exact.solve_ocp(states[0], [[0.3]] * 21, [[1.0]], [[1e-3]], [-2.0], [2.0])
    assert len(u) == 20 and all(-2.0 <= v[0] <= 2.0 for v in u) and cost >= 0

    try:
        ke.Dataset.from_json('{"dt":0.1,"p":1,"q":0,"trajectories":[],"extra":1}')
    except ValueError as e:
        assert "extra" in str(e)
    else:
        raise AssertionError("unknown key accepted")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
