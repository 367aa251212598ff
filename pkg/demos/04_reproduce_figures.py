"""Regenerate one figure's tables and compare them with the published values.

Run: python demos/04_reproduce_figures.py [figure] [n_trials]
Figures: fig3a fig4b fig5 fig6 fig7.  Without n_trials each figure uses its
default trial count (up to 10^8 per run, about a minute on one core).
"""
import sys

from homsim import figures as fg

name = sys.argv[1] if len(sys.argv) > 1 else "fig3a"
n = int(sys.argv[2]) if len(sys.argv) > 2 else None
res = fg.RUNNERS[name](n_trials=n)
for table, rows in res.tables.items():
    print(f"-- {table} ({len(rows)} rows)")
    for r in rows[:6]:
        print("  ", r)
print()
for c in res.comparison:
    print(("PASS " if c.passed else "FAIL ") + c.quantity, c.published, c.simulated, c.note)
