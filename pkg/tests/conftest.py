import random

import pytest

from swsk.frames import U16_INVALID, DeviceFrame, FrameFlags


def random_valid_frame(rng: random.Random) -> DeviceFrame:
    return DeviceFrame(
        seq=rng.randrange(0x10000),
        t_ms=rng.randrange(2**32),
        flags=FrameFlags(rng.randrange(16)),
        hr=rng.choice([0, rng.randint(25, 250)]),
        spo2=rng.choice([0, rng.randint(70, 100)]),
        body_temp=rng.choice([U16_INVALID, rng.randint(3000, 4300)]),
        gsr=rng.choice([U16_INVALID, rng.randint(0, 0xFFFE)]),
        amb_temp=rng.randint(-32768, 32767),
        humidity=rng.randint(0, 100),
        light=rng.randrange(0x10000),
        co2=rng.randrange(0x10000),
        voc=rng.randrange(0x10000),
        sound=rng.randint(0, 255),
        battery=rng.randint(0, 100),
    )


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)
