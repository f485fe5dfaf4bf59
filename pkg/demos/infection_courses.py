"""Integrate the six preset courses and print how each one ends.

Run with ``python3 demos/infection_courses.py``; it takes about a minute.
"""

import time

from rdfamily import Grid, SolverConfig, assemble_rhs, classify, initial_state, integrate, preset

HORIZON = {1: 40.0, 2: 80.0, 3: 80.0}


def main() -> None:
    grid = Grid.square(21)
    print(f"{'model':>5} {'course':>8} {'label':>12} {'virus Linf':>11} {'virus L1':>10} {'steps':>6} {'seconds':>8}")
    for model_id in (1, 2, 3):
        for course in ("healing", "chronic"):
            model = preset(model_id, course)
            start = time.perf_counter()
            traj = integrate(assemble_rhs(model, grid), initial_state(model, grid), SolverConfig(HORIZON[model_id]))
            elapsed = time.perf_counter() - start
            result = classify(traj, virus=model.virus)
            print(f"{model_id:>5} {course:>8} {result.label:>12} "
                  f"{result.metrics['final_virus_linf']:>11.3e} {result.metrics['final_virus_l1']:>10.3e} "
                  f"{traj.step_stats['accepted']:>6} {elapsed:>8.1f}")


if __name__ == "__main__":
    main()
