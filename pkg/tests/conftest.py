import numpy as np
import pytest

from horizonplan import data, maze, oracle


def open_maze(n: int = 9, cell_size: float = 0.2, v_max: float = 2.5,
              name: str = "open") -> maze.MazeSpec:
    """Bordered grid with an all-free interior."""
    grid = np.zeros((n, n), dtype=np.uint8)
    grid[0, :] = grid[-1, :] = grid[:, 0] = grid[:, -1] = 1
    return maze.MazeSpec(name=name, grid=grid, cell_size=cell_size, v_max=v_max)


@pytest.fixture(scope="session")
def umaze() -> maze.MazeSpec:
    return maze.make_maze("umaze")


@pytest.fixture(scope="session")
def umaze_norm(umaze) -> data.Normalizer:
    return data.fit_normalizer(umaze)


@pytest.fixture(scope="session")
def umaze_graph(umaze) -> oracle.ReachGraph:
    return oracle.ReachGraph(umaze)


@pytest.fixture(scope="session")
def umaze_episodes(umaze) -> list[data.Episode]:
    episodes, _ = data.generate_dataset(
        umaze, data.BehaviorConfig(episodes=60), seed=7
    )
    return episodes


@pytest.fixture(scope="session")
def open_spec() -> maze.MazeSpec:
    return open_maze()
