from cli.TFCommands import main

"""Run the ThermoForge pipeline from a source checkout. Same commands as the installed
`thermoforge` script:

    python TFPipeline.py generate --seed 7 --family holed --dims 12 12 12 --out part.vox
    python TFPipeline.py crossval --deterministic --out runs/desk

Log verbosity comes from THERMOFORGE_LOG (error, warn, info, debug).
"""

if __name__ == "__main__":
    main()
