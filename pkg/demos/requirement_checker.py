"""Show the feasibility checker accepting the presets and rejecting two variants.

The first variant kills virus at a rate independent of the local virus
amount, so killing continues where no virus is left.  The second moves
T cells up a cytokine gradient without carrying them, so the flux does
not vanish where there are no T cells.
"""

from dataclasses import replace

from rdfamily import MechanismTerm, TaxisTerm, check_requirements, preset


def main() -> None:
    for model_id in (1, 2, 3):
        print(f"model {model_id}: {check_requirements(preset(model_id)).counts()}")

    base = preset(1)
    terms = [t for t in base.reaction_terms if t.mechanism != "M5"]
    terms.append(MechanismTerm("M5_Linear", "q1", {"killer": "Tc"}, {"a5": "a5"}))
    report = check_requirements(replace(base, name="linear_killing", reaction_terms=terms).validate())
    print("\nlinear killing:")
    for rule in report.failed:
        print("  " + report[rule].line())

    base = preset(2)
    taxis = [TaxisTerm("LinearChemotaxis", t.target, t.d, attractant=t.attractant) if t.kind == "Chemotaxis" else t
             for t in base.taxis_terms]
    report = check_requirements(replace(base, name="carrier_free", taxis_terms=taxis).validate())
    print("\ncarrier-free chemotaxis:")
    for rule in report.failed:
        print("  " + report[rule].line())


if __name__ == "__main__":
    main()
