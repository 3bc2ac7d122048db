from dotenv import load_dotenv


def create_cli():
    # Load env before the group reads Settings
    load_dotenv()

    from .cli import cli, register_commands
    register_commands(cli)
    return cli
