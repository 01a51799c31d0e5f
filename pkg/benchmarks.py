"""
Benchmarks.
"""

import time
import kvevict as ke


def run_benchmarks():
    """
    Run benchmarks for one-shot and step-by-step prompt eviction.

    One-shot encoding makes one eviction call per head while step-by-step
    encoding makes ``p - C`` calls, so its elapsed time should grow much
    faster with the prompt length.
    """
    budget = ke.budget_preset("20%")

    for name in ("nacl", "h2o"):
        policy = ke.make_policy(name)
        for p in (256, 512, 1024):
            w = ke.Workload(layers=1, heads=4, head_dim=64, prompt_len=p, seed=0)
            acts = ke.generate_workload(w)

            tic = time.perf_counter()
            _, one_shot = ke.encode(acts, policy, budget)
            toc = time.perf_counter()
            t_one = toc - tic

            tic = time.perf_counter()
            _, stepwise = ke.reference_stepwise_encode(acts, policy, budget)
            toc = time.perf_counter()
            t_step = toc - tic

            print(
                f"{name:5} p {p:5}, one-shot {t_one:.4f} s ({len(one_shot)} calls), "
                f"step-by-step {t_step:.4f} s ({len(stepwise)} calls)"
            )
        print()

    q = ke.Workload(layers=1, heads=1, head_dim=64, prompt_len=2048).head(0, 0)
    lse = ke.logsumexp_rows(q.prompt_scores())
    for br in (16, 64, 256):
        tic = time.perf_counter()
        ke.reduce_tiled(q.queries, q.keys, lse, causal=True, tiles=ke.TileSpec(br, br))
        toc = time.perf_counter()
        print(f"Tiled reduction {br}x{br}, Elapsed time {toc - tic:.4f} s")


def main():
    """
    Run the benchmarks.
    """
    run_benchmarks()


if __name__ == "__main__":
    main()
