"""The executable invariant suites, and what the compat formula breaks.

The suites check the library against independent oracles: a golden-section
minimizer for the confidence closed form, brute-force moments for the
streaming statistics, finite differences for the gradients.  Flipping the
confidence formula to the halved-exponent compat rendering shows the dual
route doing its job: the argmin oracle suite fails while the structural
properties (translation, homogeneity, differentiated scaling) survive.
"""

from crucial.loss import KappaFormula
from crucial.properties import run_suites

print("argmin formula (the default):")
report = run_suites(0)
for name, entry in report.items():
    print(f"  {'PASS' if entry['passed'] else 'FAIL'} {name}: {entry['detail']}")
print()

print("halved-exponent compat formula:")
flipped = run_suites(0, formula=KappaFormula.HALF_W)
for name, entry in flipped.items():
    if not entry["passed"]:
        print(f"  FAIL {name}: {entry['detail']}")
survivors = [n for n, e in flipped.items() if e["passed"] and n.startswith("property")]
print(f"  structural properties still passing: {', '.join(survivors)}")
