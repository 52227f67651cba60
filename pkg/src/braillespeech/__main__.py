import sys

from braillespeech.pipeline_cli.cli import main

sys.exit(main())
