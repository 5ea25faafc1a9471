"""Walk through top-k selection and pseudo ground truth on one small video.

A 9-frame clip with 4 classes, of which classes 2 and 3 (0-indexed) are in
the weak label.  For each class the 3 frames with the highest p_c + p_a are
selected; the positive frames for the actionness head are the union of the
selections of the labelled classes, everything else is negative.

    python demos/pseudo_labels.py
"""
import numpy as np

from multiasl import numerics as nx
from multiasl.asl import FramePredictions, aggregate_video_scores, build_pseudo_gt, select_topk

rng = np.random.default_rng(3)
T, C, k = 9, 4, 3
labels = np.array([0, 0, 1, 1])

class_logits = rng.normal(size=(T, C))
class_logits[1:4, 2] += 2.5  # class 2 happens early
class_logits[5:8, 3] += 2.5  # class 3 happens late
actionness_logits = rng.normal(scale=0.5, size=T)
preds = FramePredictions(nx.Tensor(class_logits), nx.Tensor(actionness_logits))

idx = select_topk(preds, k)
pseudo = build_pseudo_gt(idx, labels, T)
probs, _ = aggregate_video_scores(preds, idx)

p_c, p_a = preds.class_probs.data, preds.actionness_probs.data
print("frame  p_a   " + "  ".join(f"p_c{c}" for c in range(C)) + "   selected by")
for t in range(T):
    chosen = [str(c) for c in range(C) if t in idx[:, c]]
    mark = "POS" if pseudo.positives[t] else "neg"
    row = "  ".join(f"{p_c[t, c]:.2f}" for c in range(C))
    print(f"{t:5d}  {p_a[t]:.2f}  {row}   {','.join(chosen) or '-':8s} {mark}")

print()
print("top-k mean class probabilities:", np.round(probs.data, 3))
print("labelled classes:", np.flatnonzero(labels).tolist())
print("positive frames:", np.flatnonzero(pseudo.positives).tolist())
