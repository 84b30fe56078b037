"""Smoke test for the pydistba extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`,
then run `python python/smoke_test.py`.
"""

import os
import tempfile

import pydistba as db


def main():
    problem, truth = db.generate_scene(n_cameras=5, n_points=10, visibility_window=5, seed=3)
    assert (problem.num_cameras, problem.num_points, problem.num_observations) == (5, 10, 50)
    assert db.mean_reprojection_error(problem, truth) < 1e-9

    init = db.perturb(truth, sigma_cam=0.01, sigma_point=0.01, seed=4)
    start = db.mean_reprojection_error(problem, init)

    lm = db.solve_lm(problem, init, truth=truth)
    assert lm.final_mean_reproj_err < 1e-6, lm.final_mean_reproj_err
    assert lm.converged

    admm = db.run_admm(problem, init, rho=1.0, iters=200, truth=truth)
    assert admm.iterations == 200
    assert admm.final_mean_reproj_err < start
    rec = admm.trace[-1]
    assert rec.iter == 200 and rec.camera_mse is not None
    assert rec.comm_floats == db.communication_cost(problem)

    huber = db.run_admm(problem, init, loss="huber", delta=1.0, iters=50, block_points=2, block_cameras=2)
    assert huber.iterations == 50

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "problem.txt")
        db.write_bal(path, problem, init)
        again, state = db.read_bal(path)
        assert again.observations() == problem.observations()
        assert state.cameras == init.cameras and state.points == init.points
        metrics = os.path.join(tmp, "metrics.csv")
        admm.write_metrics(metrics)
        with open(metrics) as f:
            lines = f.read().splitlines()
        assert lines[0] == db.METRICS_HEADER and len(lines) == 201

    try:
        db.parse_bal("2 2 4\n0 0 1 2\n")
    except ValueError as e:
        assert "line" in str(e)
    else:
        raise AssertionError("truncated file parsed")

    print(f"ok: start {start:.3e} px, LM {lm.final_mean_reproj_err:.3e} px, ADMM {admm.final_mean_reproj_err:.3e} px")


if __name__ == "__main__":
    main()
