"""Run a small synthetic experiment grid and print a comparison table.

Greedy packing (fm) against the fixed-repetition baseline at one and two
worker arrivals per batch. Accuracy is the fraction of questions whose
inferred answer matches the hidden truth; latency is the batch at which the
last question came back. Everything is seeded, so the table reproduces
exactly.
"""

from crowdbatch import SimConfig, run_simulation


def main():
    print(f"{'rate':>5} {'algorithm':>10} {'accuracy':>9} {'+-se':>7} "
          f"{'batches':>8} {'votes/q':>8}")
    for rate in (1.0, 2.0):
        for algorithm in ("fm", "baseline"):
            config = SimConfig(
                num_questions=60,
                delta=0.3,
                arrival_rate=rate,
                max_batches=0,
                algorithm=algorithm,
                baseline_rep=3,
                runs=20,
                seed=42,
            )
            report = run_simulation(config)
            votes = sum(r.total_votes for r in report.runs) / (20 * 60)
            print(f"{rate:>5.1f} {algorithm:>10} {report.accuracy:>9.4f} "
                  f"{report.accuracy_se:>7.4f} {report.required_batches:>8.1f} "
                  f"{votes:>8.2f}")

    print("\nwith one arrival per batch a lone vote already separates the")
    print("confidences past the threshold, so the packer returns every")
    print("question after a single answer and inherits single-vote accuracy.")
    print("with two arrivals the packer fits both workers into one question;")
    print("when they disagree the question stays open and keeps absorbing")
    print("votes, so repetition concentrates on contested questions and")
    print("accuracy passes the flat three-vote baseline at similar volume.")


if __name__ == "__main__":
    main()
