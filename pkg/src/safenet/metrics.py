from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

registry = CollectorRegistry()

windows_produced = Counter("safenet_windows_produced", "Windows cut from preprocessed recordings", registry=registry)

epochs_run = Counter("safenet_epochs_run", "Training epochs completed", registry=registry)
batches_run = Counter("safenet_batches_run", "Optimizer steps taken", registry=registry)
early_stops = Counter("safenet_early_stops", "Training runs ended by early stopping", registry=registry)

train_loss = Gauge("safenet_train_loss", "Mean training loss of the last epoch", registry=registry)
val_loss = Gauge("safenet_val_loss", "Validation loss of the last epoch", registry=registry)
learning_rate = Gauge("safenet_learning_rate", "Learning rate in effect", registry=registry)


def write_metrics(path: Path) -> None:
    """Dump every instrument in the node-exporter textfile format."""
    write_to_textfile(str(path), registry)
