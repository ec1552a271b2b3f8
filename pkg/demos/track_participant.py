"""
Picking the participant out of a detection stream
=================================================

Two people walk across the frame: the participant for the whole clip and a
passer-by for part of it, plus a few spurious detections. The tracker keeps
their identities and the longest track is taken as the participant.
"""

import numpy as np

from gaitscore.tracker import BoundingBox, select_participant, track_frames

rng = np.random.default_rng(0)
n = 120
frames = []
for t in range(n):
    dets = []
    # participant walks left to right, with a few detector dropouts
    if t % 17 != 5:
        x = 20 + 3.0 * t + rng.normal(0, 1)
        dets.append(BoundingBox(x, 80, x + 60, 260, 0.95))
    # passer-by crosses right to left during frames 30..89
    if 30 <= t < 90:
        x = 500 - 6.0 * (t - 30) + rng.normal(0, 1)
        dets.append(BoundingBox(x, 70, x + 55, 250, 0.8))
    # one-frame false positives
    if t % 29 == 0:
        dets.append(BoundingBox(600, 10, 620, 40, 0.3))
    frames.append(dets)

tracks = track_frames(frames)
for tr in tracks:
    first, last = tr.history[0][0], tr.history[-1][0]
    print(f"track {tr.id}: {len(tr.history)} boxes, frames {first}..{last}")

who = select_participant(tracks)
print("participant is track", who.id)
