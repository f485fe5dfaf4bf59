"""Compare the leveling criterion across the presets and an inert model.

A positive sigma forces every solution to flatten out in space, so a
chronic, spatially uneven course needs sigma below zero.
"""

from rdfamily import ModelDefinition, TaxisTerm, preset, sigma_criterion


def main() -> None:
    inert = ModelDefinition("inert", ("q1",), [], [TaxisTerm("Diffusion", "q1", 0.5)])
    cases = [("inert, d=0.5", inert)]
    cases += [(f"model {m} {c}", preset(m, c)) for m in (1, 2, 3) for c in ("healing", "chronic")]
    for label, model in cases:
        r = sigma_criterion(model)
        print(f"{label:>18}: d_min={r.d_min:<6.3g} M_est={r.M_est:<9.4g} sigma={r.sigma:<10.4g} "
              f"applicable={r.applicable}")
        for note in r.notes:
            print(f"{'':>20}{note}")


if __name__ == "__main__":
    main()
