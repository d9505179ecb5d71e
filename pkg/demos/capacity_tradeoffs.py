"""Map the (n, k) design space: accuracy against deletion cost.

More adapters (larger n) shrink each record, so a deletion retrains less;
more active adapters (larger k) grow the ensemble, which helps accuracy but
multiplies deletion cost. The closed-form cost report gives the expected
retraining workload per deletion, and a live sweep measures what a single
deletion actually touched.
"""

from legonet import SynthConfig, TrainerConfig, split, synth_generate
from legonet.bench import cost_report, sweep


def main():
    data = synth_generate(SynthConfig(num_classes=10, dim=32, samples_per_class=1000,
                                      cluster_separation=2.5, noise_std=1.0, seed=3))
    train, test = split(data, test_fraction=0.2, seed=1)
    N = len(train)
    print(f"dataset: {N} train / {len(test)} test\n")

    pairs = [(20, 1), (20, 5), (100, 1), (100, 5), (100, 20), (400, 5)]
    trainer = TrainerConfig(epochs=8, batch_size=64, learning_rate=0.2)
    rows = sweep(train, test, pairs, trainer, seed=9)

    print(f"{'n':>5} {'k':>4} {'acc_test %':>11} {'retrained':>10} "
          f"{'expected k^2N/n':>16}")
    for (n, k), row in zip(pairs, rows):
        expected = cost_report(d=32, C=10, n=n, k=k, s=1, N=N).expected_retrain_samples_lego
        print(f"{n:>5} {k:>4} {row.acc_test:>11.2f} {row.retrained_samples:>10} "
              f"{str(expected):>16}")

    print("\nReading the table: at fixed n, raising k buys accuracy and pays")
    print("for it in retraining volume; raising n refunds that cost by")
    print("shrinking every record. n=400, k=5 keeps the ensemble of five")
    print("while retraining a fraction of what n=20 must.")


if __name__ == "__main__":
    main()
