"""Token-to-parameter training budgets for the full-scale reference runs.

The ratio steps * batch_tokens / parameters summarizes how much data a
model saw relative to its size; compute-optimal-training analyses place
the sweet spot somewhere between ~5 and ~20, so the small model trained
five epochs (ratio > 400) is heavily over-trained per parameter while the
large single-epoch model sits near the bottom of the band.
"""

from minit5.model import budget_table, count_parameters, preset, training_budget_ratio

print(f"{'configuration':<14} {'steps':>9} {'batch_tokens':>12} {'tokens':>15} {'ratio':>8}")
for name, steps, batch_tokens, n_params, tokens, ratio in budget_table():
    print(f"{name:<14} {steps:>9,} {batch_tokens:>12,} {tokens:>15,} {ratio:>8.2f}")

print("\npreset parameter counts (32k vocabulary):")
for name in ("small", "large"):
    print(f"  {name:<6} {count_parameters(preset(name)):>13,}")

print("\na custom run: 50k steps at 65,536 tokens/batch on the small preset")
params = count_parameters(preset("small"))
print(f"  ratio = {training_budget_ratio(50_000, 65_536, params):.2f}")
