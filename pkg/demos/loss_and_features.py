"""
Losses and skeleton features
============================

How the hybrid focal/ordinal loss reacts to confidence and to ordinal
distance, and what the three network inputs look like for one clip.
"""

import numpy as np

from gaitscore import LossConfig, clip_features, focal, hybrid, ordinal, synth_gait
from gaitscore.pose import DEFAULT_LAYOUT, clip_sequence, normalize_center

# focal loss shrinks the contribution of confident, correct predictions
print("p_true   cross-entropy   focal   ratio")
for q in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99):
    ce = -np.log(q)
    f = focal(0, [q, 1 - q])
    print(f"{q:6.2f}   {ce:13.4f}   {f:.4f}   {f / ce:.4f}")

# the ordinal term grows with the distance between predicted and true class
p = np.full(4, 0.1)
p[0] = 0.2
for pred in (1, 2, 3):
    q = p.copy()
    q[pred] = 0.6
    print(f"true 0, argmax {pred}: ordinal {ordinal(0, q):.4f}, hybrid {hybrid(0, q, LossConfig())[0]:.4f}")

# one class-2 exam, normalized and cut into 200-frame clips
seq = synth_gait(2, duration_frames=430, seed=7)
clips = clip_sequence(normalize_center(seq, DEFAULT_LAYOUT), window=200, min_tail=100)
print("clip starts:", [c.start for c in clips])

feats = clip_features(clips[0].frames)
print("JCD", feats.jcd.shape, "slow", feats.slow.shape, "fast", feats.fast.shape)
