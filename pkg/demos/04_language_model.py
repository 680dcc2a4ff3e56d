"""Word-level language model compression at toy scale.

Trains a small next-word model (on a real corpus if CORPUS points at a
plain-text file, otherwise on the bundled synthetic prose generator),
then sweeps the forward and recurrent ranks, converts perplexity to dB
over the grid minimum, and reads off how far each side compresses before
crossing +1 dB. Takes a few minutes on one core.
"""

import os

import numpy as np

from rnnsvd import build_vocab, grid_to_db, synthetic_corpus, tokenize
from rnnsvd.experiments import perplexity_evaluator, train_language_model
from rnnsvd.sweep import crossing_rank, geometric_ranks, rank_sweep
from rnnsvd.training import TrainingConfig

HIDDEN = EMBED = 48

corpus_path = os.environ.get("CORPUS")
if corpus_path:
    text = open(corpus_path, encoding="utf-8").read()[:400_000]
else:
    text = synthetic_corpus(60_000, seed=11)
tokens = tokenize(text)
vocab = build_vocab(tokens, max_size=4000)
ids = vocab.encode(tokens)
split = int(ids.size * 0.9)
print(f"{ids.size} tokens, vocabulary {len(vocab)}")

cfg = TrainingConfig(learning_rate=1e-3, batch_size=20, window=32, epochs=3,
                     keep_prob=0.5, clip_norm=5.0, seed=2)
model, log = train_language_model(ids[:split], len(vocab), "rnn", HIDDEN, EMBED, cfg,
                                  eval_ids=ids[split:])
for row in log:
    print(f"epoch {row['epoch']}: train ppl {row['train_perplexity']:.1f}, "
          f"held-out ppl {row['eval_perplexity']:.1f}")

ranks = geometric_ranks(HIDDEN)
ev = perplexity_evaluator(ids[split:], cfg.batch_size, cfg.window)
grid = rank_sweep(model, ranks, ranks, ev, metric="perplexity")
db = grid_to_db(grid)

print("\nperplexity dB over (forward rank x recurrent rank):")
print("      " + " ".join(f"{r:>6}" for r in ranks))
for i, rf in enumerate(ranks):
    print(f"{rf:>5} " + " ".join(f"{db.values[i, j]:>6.2f}" for j in range(len(ranks))))

fwd_curve = db.values[:, -1]   # recurrent at full rank
rec_curve = db.values[-1, :]   # forward at full rank
r_f = crossing_rank(ranks, fwd_curve, 1.0)
r_r = crossing_rank(ranks, rec_curve, 1.0)
print(f"\n+1 dB rank: forward {r_f:.1f}, recurrent {r_r:.1f} "
      f"(ratio {r_r / r_f:.2f})")
