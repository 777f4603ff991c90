#!/usr/bin/env python3
"""Price the strike ladder with several engines from one config file."""

import asyncio
import json
import os
from pathlib import Path

from dotenv import load_dotenv

from src.cli import cmd_price, parse_ladder
from src.config import configure_logging, load_run_config


async def main():
    load_dotenv()
    configure_logging(os.getenv("SVJQ_VERBOSE", "0") == "1")
    config_path = os.getenv("SVJQ_CONFIG", "config/table1.conf")
    out_root = Path(os.getenv("SVJQ_OUT", "out"))
    ladder = parse_ladder(os.getenv("SVJQ_LADDER", "80:120:5"))
    engines = [e.strip() for e in os.getenv("SVJQ_ENGINES", "poly,rmq").split(",") if e.strip()]

    base = load_run_config(config_path)
    for engine in engines:
        cfg = base.with_overrides(engine=engine, out=str(out_root / engine))
        written = await asyncio.to_thread(cmd_price, cfg, ladder)
        print(json.dumps({"engine": engine, "written": written}, indent=2))


if __name__ == "__main__":
    asyncio.run(main())
