"""Watch FedAvg rounds: per-center losses and the global checksum.

Run with ``python3 demos/02_federated_rounds.py``.
"""

import tempfile
from pathlib import Path

from fedsim import FederationConfig
from fedsim.data import generate_domain, leave_one_out_split
from fedsim.federation import run_federation
from fedsim.harness import default_domains
from fedsim.model import load_checkpoint

# %% Leave domain M out; the other three act as data centers.
domains = [generate_domain(s) for s in default_domains("table2")]
centers, user = leave_one_out_split(domains, "M")
print("centers:", [c.domain_id for c in centers], " user:", user.domain_id)

# %% Ten rounds, logging every round and checkpointing every fifth.
config = FederationConfig(rounds=10)
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    model, logs = run_federation(centers, config, log_path=tmp / "log.jsonl", checkpoint_dir=tmp / "ck", checkpoint_every=5)
    for log in logs:
        losses = "  ".join(f"{x[-1]:.3f}" for x in log.center_losses)
        print(f"round {log.round_index:2d}  last-epoch losses {losses}  global {log.checksum}")
    restored = load_checkpoint(tmp / "ck" / "round_0010.fedw")
    print("checkpoint restores the final model:", restored.params.tobytes() == model.params.tobytes())
