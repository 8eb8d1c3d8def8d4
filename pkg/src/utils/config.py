from decouple import config

class Settings:
    LOG_LEVEL: str = config('LOG_LEVEL', default='INFO')
    LOG_FORMAT: str = config('LOG_FORMAT', default='json')

    # Параллелизм и воспроизводимость
    THREADS: int = config('TIMEFUSE_THREADS', default=1, cast=int)
    SEED: int = config('TIMEFUSE_SEED', default=0, cast=int)

    # Гиперпараметры fusor'а по умолчанию (batch 32, lr 1e-3)
    FUSOR_LEARNING_RATE: float = config('FUSOR_LEARNING_RATE', default=1e-3, cast=float)
    FUSOR_BATCH_SIZE: int = config('FUSOR_BATCH_SIZE', default=32, cast=int)
    FUSOR_MAX_EPOCHS: int = config('FUSOR_MAX_EPOCHS', default=50, cast=int)
    FUSOR_PATIENCE: int = config('FUSOR_PATIENCE', default=5, cast=int)
    FUSOR_HUBER_DELTA: float = config('FUSOR_HUBER_DELTA', default=1.0, cast=float)
    FUSOR_VAL_FRACTION: float = config('FUSOR_VAL_FRACTION', default=0.1, cast=float)

settings = Settings()
