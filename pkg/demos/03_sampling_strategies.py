"""How the sampling transforms reshape the next-token distribution.

Shows the repetition penalty, temperature, and nucleus truncation on a
small worked distribution, then the published preset combinations.
"""

import numpy as np

from ctrlkit.sampler import PRESETS, SamplingParams, adjust_distribution

logits = np.array([2.0, 1.5, 0.5, 0.0, -1.0])
names = ["tok0", "tok1", "tok2", "tok3", "tok4"]


def show(title, probs):
    cells = "  ".join(f"{n}={p:.3f}" for n, p in zip(names, probs))
    print(f"{title:<42} {cells}")


show("plain softmax", adjust_distribution(logits, set(), SamplingParams()))

# tok0 was already generated: its positive logit is divided by r
for r in (1.2, 1.6, 2.0):
    sp = SamplingParams(repetition_penalty=r)
    show(f"repetition penalty r={r} on tok0", adjust_distribution(logits, {0}, sp))

# lower temperature sharpens before the softmax
for t in (1.0, 0.5, 0.2):
    sp = SamplingParams(temperature=t)
    show(f"temperature T={t}", adjust_distribution(logits, set(), sp))

# the nucleus keeps the smallest prefix of mass >= p and renormalizes
for p in (1.0, 0.9, 0.7, 0.5):
    sp = SamplingParams(nucleus_p=p)
    show(f"nucleus p={p}", adjust_distribution(logits, set(), sp))

print()
print("preset combinations:")
for name, sp in PRESETS.items():
    print(f"  {name}: T={sp.temperature}, p={sp.nucleus_p}, "
          f"r={sp.repetition_penalty}, max_new_tokens={sp.max_new_tokens}")
