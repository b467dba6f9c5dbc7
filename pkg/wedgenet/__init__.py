from .cache import DictionaryCache, NoCache
from .config import config
from .dict_builder import DataMatrix, Dictionary, build_dictionary
from .lasso_solver import Loss, SolverConfig, problem_for, solve, solve_min_norm_interpolation
from .net_builder import ReluNetwork, balance_scaling, forward, nonconvex_cost, reconstruct
from .polisher import PolishConfig, polish_network
