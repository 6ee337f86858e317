"""
Where the time goes in one frame cycle
======================================

A frame cycle has eight stages.  Only stage e, the 100 ms burst of 10^7
qubits at 100 MHz, carries quantum signals; everything else is
generation, transfer, header, deadtime, Alice's processing (g) and
polarization compensation (h).  This script prints the budget and the
resulting duty cycle for the two ends of the observed stage-g range.
"""

from qkdtime import ClockConfig, StageDefaults, duty_cycle, timeline

clock = ClockConfig()  # 10^7 qubits per frame at 100 MHz

# %%
# The two budgets: stage g took 55 ms on a quiet run and 130 ms when the
# CPU was busy with error correction.
for g_ms in (55, 130):
    budget = timeline(clock, g_ms, include_pol=True)
    stages = ", ".join(f"{name[-1]}={value:g}" for name, value in vars(budget).items())
    print(f"g = {g_ms:3d} ms  total {budget.total:9.5f} ms  duty {duty_cycle(budget):.4f}   [{stages}]")

# %%
# Without polarization compensation the cycle is 140 ms shorter.
print(f"\nno compensation, g = 55 ms: duty {duty_cycle(timeline(clock, 55, include_pol=False)):.4f}")

# %%
# Which overhead matters most?  Remove each stage in turn.  Frame
# generation and transfer (a, b) dominate; the header is negligible.
base = StageDefaults()
print(f"\nreference duty at g = 80 ms: {duty_cycle(timeline(clock, 80, True, base)):.4f}")
for stage in ("t_a", "t_b", "t_c", "t_d", "t_f", "t_h"):
    without = StageDefaults(**{**vars(base), stage: 0.0})
    print(f"  without {stage}: duty {duty_cycle(timeline(clock, 80, True, without)):.4f}")
