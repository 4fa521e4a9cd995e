#!/usr/bin/env python3
"""A miniature two-stage continual run, with and without pseudo labels.

Stage 1 learns three organ classes.  Stage 2 adds a tumor class whose
training data carries no organ annotations; old-class supervision comes
from the stage-1 model's own predictions.  Plain fine-tuning on the same
data shows what the pseudo labels prevent.  Runs in roughly a minute on
one CPU core (this is a scaled-down preview; the acceptance suite runs the
full-size version).
"""

import time

from contseg import backbone as bb
from contseg import engine, metrics
from contseg.embeddings import EmbeddingProvider
from contseg.phantoms import make_staged_dataset, tumor_spec, two_stage_plan

t0 = time.time()
ds = make_staged_dataset(two_stage_plan(), tumor_spec(height=48, width=48),
                         n_per_stage=48, seed=0, n_eval=12)
provider = EmbeddingProvider("hash", 32, seed=0)
cfg_net = bb.BackboneConfig(enc_channels=(8, 16, 32), enc_strides=(1, 2, 2),
                            dec_channels=(16, 16))
model = engine.build_model(cfg_net, 32, "hash", hyper_hidden=64, seed=0)
registry = model.registry.extend(["liver", "spleen", "kidney"], 1, provider)
model = engine.extend_model(model, list(registry.classes))

cfg = engine.TrainConfig(lr=5e-3, epochs=10, batch_size=8, seed=1)
engine.train_stage(model, ds.stages[0].train, engine.PseudoLabelStore(), cfg)
stage1 = metrics.evaluate_model(model, ds.eval_set, ds.groups(), step=1)
print(f"after stage 1: organ-group Dice {stage1.groups['organs']:.3f}")
engine.save_checkpoint(model, "/tmp/demo_stage1.ckpt")

reports = [stage1]
for method in ("finetune", "ours"):
    m = engine.load_checkpoint("/tmp/demo_stage1.ckpt")
    store = engine.PseudoLabelStore()
    if method == "ours":
        store = engine.precompute_pseudo_labels(m, ds.stages[1].train)
    registry = m.registry.extend(["tumor"], 2, provider)
    m = engine.extend_model(m, [registry.classes[-1]])
    engine.train_stage(m, ds.stages[1].train, store, cfg, method=method)
    report = metrics.evaluate_model(m, ds.eval_set, ds.groups(),
                                    method=method, step=2)
    reports.append(report)
    print(f"after stage 2 [{method:8s}]: organs {report.groups['organs']:.3f}"
          f"  tumor {report.groups['tumor']:.3f}")

print()
print(metrics.render_table(reports, ds.group_steps()))
print(f"total {time.time() - t0:.0f}s")
