"""
Train, save and score through the command-line layer
====================================================

The same steps as ``gaitscore synth``, ``gaitscore train`` and
``gaitscore score``, called as functions.
"""

import tempfile
from pathlib import Path

from gaitscore.cli import RunConfig, cmd_score, cmd_synth, cmd_train

work = Path(tempfile.mkdtemp())
data = work / "exams"
cmd_synth(RunConfig(out=str(data), seed=3, n_per_class=6, frames=300))

settings = dict(seed=3, epochs=100, filters=16, window=100, min_tail=50)
ckpt = work / "model.ckpt"
blob = cmd_train(RunConfig(inputs=[str(data)], out=str(ckpt), **settings))
print(f"checkpoint {ckpt.name}: {len(blob)} bytes")

# a second run with the same seed gives the same bytes
again = cmd_train(RunConfig(inputs=[str(data)], **settings))
print("byte-identical rerun:", again == blob)

for exam in sorted(data.glob("*.pose"))[::6]:
    res = cmd_score(RunConfig(inputs=[str(exam)], checkpoint=str(ckpt)))
    probs = " ".join(f"{p:.2f}" for p in res["probabilities"])
    print(f"{exam.stem}: score {res['label']}  [{probs}]")
