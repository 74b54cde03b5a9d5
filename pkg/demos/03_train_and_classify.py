"""Train a tiny classifier and carry it across a checkpoint roundtrip.

Generates a small labeled corpus, trains the transformer from scratch,
classifies held-out traces, then saves and reloads the checkpoint and
shows that the reloaded model reproduces the exact same probabilities.

Run: python3 demos/03_train_and_classify.py  (about 10 seconds)
"""

import os
import tempfile

from goracle import (
    ALL_FIELDS,
    ModelConfig,
    SynthConfig,
    TrainConfig,
    Verdict,
    build_vocab,
    init_model,
    load_checkpoint_file,
    predict,
    save_checkpoint_file,
    serialize_trace,
    synth_traces,
    tokenize,
    train,
)
from goracle.signatures import UNMATCHED_BLOCK

L = 256

# 1. A labeled corpus: failing traces contain a goroutine that blocks
#    and is never unblocked; passing ones always pair block/unblock.
corpus = synth_traces(SynthConfig(
    num_projects=2, traces_per_project=30, seed=11,
    events_min=3, events_max=6, bug_mix={UNMATCHED_BLOCK: 1.0},
))
train_items = [it for i, it in enumerate(corpus) if i % 5 != 0]
test_items = [it for i, it in enumerate(corpus) if i % 5 == 0]
n_fail = sum(1 for _, lab, _ in corpus if lab.verdict is Verdict.Fail)
print(f"corpus: {len(corpus)} traces ({n_fail} failing), "
      f"{len(train_items)} train / {len(test_items)} held out")

# 2. Vocabulary comes from training serializations only.
vocab = build_vocab([serialize_trace(t, ALL_FIELDS) for t, _, _ in train_items])
data = [(tokenize(t, vocab, ALL_FIELDS, L=L),
         int(lab.verdict is Verdict.Fail))
        for t, lab, _ in train_items]

# 3. Train from random init with manual-backprop Adam.
mcfg = ModelConfig(vocab_size=len(vocab), seq_len=L, embed_dim=64,
                   num_layers=1, num_heads=2)
tcfg = TrainConfig(steps=600, batch_size=8, seed=7)
params = init_model(mcfg, seed=tcfg.seed)
params, losses = train(params, mcfg, data, tcfg)
mean = lambda xs: sum(xs) / len(xs)  # noqa: E731
print(f"trained {tcfg.steps} steps: "
      f"loss {mean(losses[:20]):.3f} -> {mean(losses[-20:]):.3f}\n")

# 4. Classify the held-out traces.
print("held-out verdicts (prediction vs truth):")
right = 0
for i, (trace, lab, _fmt) in enumerate(test_items):
    verdict, (p_pass, p_fail) = predict(
        params, mcfg, tokenize(trace, vocab, ALL_FIELDS, L=L))
    ok = verdict is lab.verdict
    right += ok
    mark = "ok " if ok else "MISS"
    print(f"  {lab.project}/{i:02d}  p_fail={p_fail:.4f}  "
          f"{verdict.value:<4} truth={lab.verdict.value:<4} {mark}")
print(f"accuracy: {right}/{len(test_items)}\n")

# 5. Checkpoint roundtrip: the model, its config, the vocabulary and the
#    field mask all travel in one file; predictions survive bit for bit.
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "demo.ckpt")
    save_checkpoint_file(path, params, mcfg, vocab, ALL_FIELDS)
    size = os.path.getsize(path)
    params2, mcfg2, vocab2, fields2 = load_checkpoint_file(path)
    seq = tokenize(test_items[0][0], vocab2, fields2, L=mcfg2.seq_len)
    _, before = predict(params, mcfg, seq)
    _, after = predict(params2, mcfg2, seq)
    assert before == after, "reloaded model diverged"
    print(f"checkpoint: {size} bytes; reloaded p_fail={after[1]:.10f} "
          "matches the in-memory model exactly")
