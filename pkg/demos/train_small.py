"""Train on a small synthetic set and look at what the model learned.

Generates a reduced dataset (fewer videos, smaller frames) so the run takes
well under a minute, trains with the full objective, then prints video-level
mAP, the actionness AUC against the planted segments, and a strip of
per-frame actionness for a few test videos.

    python demos/train_small.py [epochs]
"""
import sys

import numpy as np

from multiasl.datagen import SynthConfig, generate, split_indices
from multiasl.encoder import EncoderConfig
from multiasl.trainer import TrainConfig, fit, localization_auc

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 15
synth = SynthConfig(num_views=3, num_classes=4, frame_height=16, frame_width=16, videos=160,
                    noise_std=0.5, seed=0)
videos = generate(synth)
labels = np.array([v.labels for v in videos])
is_test = split_indices(labels, synth.test_fraction, synth.seed)
train = [v for v, t in zip(videos, is_test) if not t]
test = [v for v, t in zip(videos, is_test) if t]

cfg = TrainConfig(learning_rate=1e-3, epochs=epochs, seed=0,
                  encoder=EncoderConfig(spatial_dim=32, temporal_dim=64, feedforward_dim=128))
result = fit(cfg, train, test)

for row in result.history[:: max(1, epochs // 5)]:
    loss = f"{row['total']:.4f}" if "total" in row else "-"  # epoch 0 is evaluation only
    print(f"epoch {row['epoch']:3d}  total loss {loss:>8s}  test mAP_C {row['test_map_c']:.3f}")
print(f"best epoch {result.best_epoch}: mAP_C {result.test.map_c:.3f}  mAP_S {result.test.map_s:.3f}  "
      f"actionness AUC {localization_auc(result.test, test):.3f}")

print("\nplanted segments (#) against predicted actionness, first test videos:")
for i, v in enumerate(test[:4]):
    mask = v.segment_mask(result.test.frame_indices[i])
    print("  truth  " + "".join("#" if m else "." for m in mask))
    print("  p_a    " + "".join(str(min(9, int(p * 10))) for p in result.test.actionness[i]))
