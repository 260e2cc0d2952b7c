"""Ternary argmax tables: generation, counting, optimization levels, splitting.

A switch cannot compute argmax directly, but a single priority ternary
match can: this walks the construction from the naive baseline to the
fully optimized n * m^(n-1) form, then splits a too-wide argmax into a
tournament of small tables.
"""

import io

from matchplane import ternary

print("=== A tiny instance: 3 numbers, 2 bits each ===")
table = ternary.generate_table(3, 2)
buf = io.StringIO()
ternary.dump_table(table, buf)
print(buf.getvalue())
print(f"lookup (2, 3, 1) -> winner {table.lookup((2, 3, 1))}")
print(f"lookup (3, 3, 0) -> winner {table.lookup((3, 3, 0))}  (tie, index 0 precedes)")

print("=== Entry counts per optimization level ===")
print(f"{'(n,m)':>8} {'base':>10} {'opt1':>8} {'opt2':>9} {'opt1+opt2':>10} {'2^(nm)':>12}")
for n, m in [(3, 16), (4, 8), (5, 5), (6, 4)]:
    counts = [ternary.count_entries(n, m, lvl) for lvl in ("base", "opt1", "opt2", "opt1+opt2")]
    print(f"({n},{m:>2})  {counts[0]:>10} {counts[1]:>8} {counts[2]:>9} {counts[3]:>10} {2**(n*m):>12.2e}")

print()
print("=== Closed form: fully optimized count is n * m^(n-1) ===")
for n, m in [(2, 8), (3, 4), (5, 6)]:
    t = ternary.generate_table(n, m)
    print(f"n={n} m={m}: generated {len(t)} entries, n*m^(n-1) = {n * m**(n-1)}")

print()
print("=== Splitting a wide argmax into a tournament ===")
chain = ternary.split_argmax(6, 11, fan=3)
for i, stage in enumerate(chain.stages):
    ops = ", ".join(f"{k}{i}" for k, i in stage.operands)
    print(f"stage {i}: compare [{ops}] with a (n={stage.table.n}, m={stage.table.m}) "
          f"table of {len(stage.table)} entries")
print(f"total TCAM entries: {chain.total_entries()} "
      f"(vs {ternary.count_entries(6, 11)} for one monolithic table)")
vals = [100, 900, 900, 7, 2000, 1999]
print(f"chain.lookup({vals}) -> {chain.lookup(vals)}")
