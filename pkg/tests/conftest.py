import numpy as np
import pytest

from loopmotion.config import Config
from loopmotion.corpus import corpus_features, generate_corpus
from loopmotion.skeleton import skeleton_13, skeleton_22


def small_config() -> Config:
    cfg = Config()
    cfg.skeleton.joints = 13
    cfg.corpus.locomote = 14
    cfg.corpus.strike = 10
    cfg.corpus.sit = 6
    cfg.corpus.getup = 6
    return cfg


@pytest.fixture(scope="session")
def sk13():
    return skeleton_13()


@pytest.fixture(scope="session")
def sk22():
    return skeleton_22()


@pytest.fixture(scope="session")
def small_cfg():
    return small_config()


@pytest.fixture(scope="session")
def small_corpus(small_cfg, sk13, tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus13")
    clips = generate_corpus(small_cfg, sk13, out)
    return out, clips


@pytest.fixture(scope="session")
def small_features(small_cfg, sk13, small_corpus):
    _, clips = small_corpus
    feats, prompts, kept = corpus_features(sk13, clips, small_cfg.contacts.height,
                                           small_cfg.contacts.speed)
    return feats, prompts, kept


@pytest.fixture(scope="session")
def tiny_planner(small_cfg, sk13, small_features):
    """A briefly trained planner: real data flow, no motion quality."""
    from loopmotion.diffusion import make_schedule
    from loopmotion.planner import DenoiserConfig, DiPlanner, DipTrainer, build_vocab

    feats, prompts, _ = small_features
    vocab = build_vocab([p for ps in prompts for p in ps])
    dcfg = DenoiserConfig(layers=2, latent_dim=32, heads=4, prefix_frames=20,
                          pred_frames=40, text_tokens=12, vocab_size=len(vocab))
    planner = DiPlanner(sk13, dcfg, make_schedule(5, "cosine"), vocab, seed=0)
    trainer = DipTrainer(planner, feats, prompts, lr=3e-4, batch_size=16, seed=0)
    trainer.train(30)
    return planner
