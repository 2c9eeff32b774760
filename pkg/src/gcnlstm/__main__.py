import sys

from gcnlstm.cli import main

sys.exit(main())
