"""
Segmentation losses and seeded augmentation
===========================================

The shape-consistency loss adds one minus the foreground soft Dice to the
class-weighted cross-entropy. Analytic gradients are checked against
central differences. Augmentation plans are sampled once and replayed
exactly from JSON.
"""

import numpy as np

from lge_synthlab import augment, losses, volcore

rng = np.random.default_rng(4)
target = rng.integers(0, 3, (6, 6, 6))
raw = rng.random((3, 6, 6, 6)) + 0.05
pred = raw / raw.sum(axis=0)

w = losses.class_weights(target, 3)
print("class weights:", np.round(w.weights, 3))
print("dice per class:", np.round(losses.soft_dice(pred, target)[0], 4))
print("cross-entropy:", round(losses.cross_entropy(pred, target, w), 4))
print("shape consistency:", round(losses.shape_consistency_loss(pred, target, w), 4))
for name in ("soft_dice", "cross_entropy"):
    print(f"grad check {name}: {losses.grad_check(name, pred, target, w=w):.2e}")

# augmentation: spatial ops touch both volume and mask, intensity ops only the volume
v = volcore.Volume3D(rng.random((24, 24, 12)))
m = volcore.LabelMap3D(target.repeat(4, 0).repeat(4, 1).repeat(2, 2))
plan = augment.sample_plan(seed=7, config={name: {"p": 1.0} for name in augment.DEFAULT_CONFIG})
print([op["op"] for op in plan.ops])
v1, m1 = augment.apply(plan, v, m)
v2, m2 = augment.apply(augment.AugmentPlan.from_json(plan.to_json()), v, m)
print("replay identical:", v1.data.tobytes() == v2.data.tobytes() and m1.labels.tobytes() == m2.labels.tobytes())
print("mask labels:", sorted(np.unique(m1.labels).tolist()))
