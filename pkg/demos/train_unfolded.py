"""Train the unfolded network and the generic stacked baseline side by side.

A scaled-down run of the desk-scale experiment: identical data, epochs,
learning rate, and depth for both models. The unfolded model starts as K
proximal-gradient iterations per frame and learns its operators; the
stacked RNN has the same parameter budget per layer but no built-in
structure. Finishes in well under a minute.
"""

import numpy as np

from l1l1rnn.data import SyntheticSpec, synthetic_batch
from l1l1rnn.metrics import evaluate
from l1l1rnn.training import TrainConfig, TrainData, model_from_raw, train

SPEC = SyntheticSpec(n=64, d=128, m=16, T=10, s0=4, innovation_sparsity=4,
                     amplitude_range=(0.5, 1.5), seed=1234)


def make_data(num_train=80, num_val=20):
    # energy concentrated in a decaying spectrum plus sparse innovations;
    # decay keeps the per-frame support well under the measurement count
    rng = np.random.default_rng((SPEC.seed, 0xD1C7))
    u, _, vt = np.linalg.svd(rng.normal(0.0, 1.0, (SPEC.n, SPEC.d)), full_matrices=False)
    sigma = (1.0 + np.arange(float(SPEC.n))) ** -0.7
    D = u @ (sigma[:, None] * vt)
    D *= np.sqrt(SPEC.n) / np.linalg.norm(D, "fro")
    G = 0.25 * np.eye(SPEC.d)
    signals, _ = synthetic_batch(SPEC, G, D, num_train + num_val)
    return TrainData(train_signals=signals[:num_train], val_signals=signals[num_train:])


def main():
    data = make_data()
    cfg = TrainConfig(epochs=12, learning_rate=3e-4, batch_size=16, K=10, seed=0,
                      lambda1_init=0.02, lambda2_init=0.02, alpha_init=1.0)

    results = {}
    for kind, extra in (("l1l1_rnn", {"g_init": "identity"}), ("stacked_rnn", {})):
        res = train(data, kind, cfg, m=SPEC.m, d=SPEC.d, **extra)
        results[kind] = res
        print(f"{kind}: epoch-0 {res.curve[0][2]:.2f} dB -> best {res.best_val_psnr:.2f} dB "
              f"(epoch {res.best_epoch})")

    print(f"\n{'epoch':>5}  {'unfolded':>8}  {'stacked':>8}")
    for row_a, row_b in zip(results["l1l1_rnn"].curve, results["stacked_rnn"].curve):
        print(f"{row_a[0]:5d}  {row_a[2]:8.2f}  {row_b[2]:8.2f}")

    model = model_from_raw(results["l1l1_rnn"].best_params, K=cfg.K, T=SPEC.T)
    report = evaluate(model, data.val_signals)
    print(f"\nunfolded last-layer zero fraction: {report.zero_fraction_last:.2f}")
    print("the prox keeps exact zeros in the codes even after training; the")
    print("stacked baseline has no mechanism that produces them.")


if __name__ == "__main__":
    main()
