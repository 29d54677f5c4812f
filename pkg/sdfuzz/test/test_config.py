import pytest

from sdfuzz.config import CampaignConfig, CampaignError


def test_defaults():
    config = CampaignConfig()
    assert config.max_test_cases == 2000
    assert config.gamma == 0.7
    assert config.alpha == 0.5
    assert config.beta == 0.1
    assert config.splice_prob == 0.75
    assert config.ablation is None
    assert config.population_size is None
    assert not config.record_wall_time


def test_errors_are_collected():
    with pytest.raises(CampaignError) as excinfo:
        CampaignConfig(max_test_cases=0, gamma=0.0)
    message = str(excinfo.value)
    assert "max_test_cases must be at least 1, received: 0" in message
    assert "gamma must be in (0, 1], received: 0.0" in message


@pytest.mark.parametrize(
    "changes",
    [
        {"alpha": 1.5},
        {"beta": 0.0},
        {"n_fraction": 0.0},
        {"timeout": -1.0},
        {"ablation": "everything"},
        {"population_size": 0},
        {"max_seq_len": 0},
        {"crossover_prob": -0.1},
        {"splice_prob": 1.5},
    ],
)
def test_invalid(changes):
    with pytest.raises(CampaignError):
        CampaignConfig(**changes)


def test_from_dict():
    config = CampaignConfig.from_dict({"rng_seed": 4, "ablation": "state"})
    assert config.rng_seed == 4
    assert config.ablation == "state"
    assert CampaignConfig.from_dict(config.to_dict()) == config

    with pytest.raises(CampaignError, match="Unknown configuration keys: colour, size"):
        CampaignConfig.from_dict({"size": 1, "colour": "red"})


def test_replace():
    config = CampaignConfig()
    changed = config.replace(max_test_cases=10)
    assert changed.max_test_cases == 10
    assert config.max_test_cases == 2000
    with pytest.raises(CampaignError):
        config.replace(max_test_cases=-1)
