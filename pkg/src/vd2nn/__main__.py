import sys

from vd2nn.cli import main

sys.exit(main())
