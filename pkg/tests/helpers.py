"""Small configurations shared by the federated tests."""
from sstafed.config import ExperimentConfig
from sstafed.fl import AggregationStrategy
from sstafed.model import SstaConfig
from sstafed.synthdata import Corruption, Scenario

TINY_MODEL = dict(conv_channels=2, attention_dim=3, fc_dim=4, conv1d_channels=3, lstm_hidden=4)


def tiny_config(kind="gsc", *, operators=3, rounds=2, seed=0, corrupt=(), epochs=1, **strategy):
    scen = Scenario(
        train_participants=6, test_trained=2, test_untrained=2, operators=operators,
        sequences_per_class=2, test_sequences_per_class=1, frame_size=(4, 4), sequence_length=3,
        corruption=tuple(Corruption(o) for o in corrupt),
    )
    model = SstaConfig(frame_size=(4, 4), sequence_length=3, **TINY_MODEL)
    return ExperimentConfig(
        seed=seed, scenario=scen, model=model, strategy=AggregationStrategy(kind=kind, **strategy),
        rounds=rounds, local_epochs=epochs, lr=0.01, batch_size=4,
    )
