import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """Runtime settings for the solver and the batch CLI"""

    # Application
    ENVIRONMENT: str = os.getenv("CONEMV_ENVIRONMENT", "production")
    DEBUG: bool = ENVIRONMENT == "development"
    LOG_LEVEL: str = os.getenv("CONEMV_LOG_LEVEL", "DEBUG" if DEBUG else "INFO")
    LOG_DIR: str = os.getenv("CONEMV_LOG_DIR", "logs")
    OUTPUT_DIR: str = os.getenv("CONEMV_OUTPUT_DIR", "out")

    # Solver defaults (used when neither the config file nor a flag sets them)
    DEFAULT_STEPS: int = int(os.getenv("CONEMV_DEFAULT_STEPS", "1000"))
    DEFAULT_SCHEME: str = os.getenv("CONEMV_DEFAULT_SCHEME", "rk4")
    DEFAULT_PATHS: int = int(os.getenv("CONEMV_DEFAULT_PATHS", "100000"))
    DEFAULT_SEED: int = int(os.getenv("CONEMV_DEFAULT_SEED", "0"))
    GAUSS_POINTS: int = int(os.getenv("CONEMV_GAUSS_POINTS", "5"))
    CHUNK_PATHS: int = int(os.getenv("CONEMV_CHUNK_PATHS", "2048"))

    def solver_defaults(self) -> dict:
        """Get numeric option defaults"""
        return {
            "n_steps": self.DEFAULT_STEPS,
            "scheme": self.DEFAULT_SCHEME,
            "mc_paths": self.DEFAULT_PATHS,
            "seed": self.DEFAULT_SEED,
            "gauss_points": self.GAUSS_POINTS,
            "x": -1.0,
        }

    def get_logging_config(self) -> dict:
        """Get logging configuration"""
        return {
            "log_dir": self.LOG_DIR,
            "level": self.LOG_LEVEL,
            "max_bytes": 10485760,  # 10MB
            "backup_count": 5,
        }


# Global settings instance
settings = Settings()
