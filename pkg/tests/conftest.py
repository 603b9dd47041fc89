import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True)
settings.load_profile("repo")

CORPUS_SCENES = 50
MC4_TASKS = ("sequence", "spatial_proximity", "camera_motion_target", "identification_closest",
             "tem_horizontal_direction")


def corpus_config():
    from s3forge.pipeline import build_config
    quotas = {t: 8 for t in ("camera_displacement", "current_room_area", "cam_obj_distance", "attribute",
                             "spatial_distance", "area", "count", "relative_orientation", "sequence_identification",
                             "tem_spatial_distance_ref", "tem_cam_obj_distance_ref")}
    quotas.update({t: 24 for t in MC4_TASKS})
    return build_config({"qa": {"quotas": quotas}})


@pytest.fixture(scope="session")
def corpus():
    """50 seeded toy scenes (<= 6 rooms, <= 30 objects) through plan, vis and genqa."""
    from s3forge.pipeline import toy_corpus
    return toy_corpus(CORPUS_SCENES, seed0=1000, base=corpus_config(), max_rooms=6, max_objects=30)


@pytest.fixture(scope="session")
def small_world():
    """One two-room scene with its trajectory, grid and table."""
    from s3forge.pipeline import toy_corpus, build_config
    return toy_corpus(1, seed0=3, base=build_config({"scene": {"rooms": 2, "objects": 10}}),
                      max_rooms=2, max_objects=10, with_episodes=True)[0]


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
