"""
Train Forms
Validation of JSON train-config documents
"""
from wtforms import FieldList, FloatField, Form, IntegerField, SelectField
from wtforms.validators import NumberRange, ValidationError

from core.errors import ConfigurationError
from core.segnet import NORMS
from core.trainer import MODES, TrainConfig


def _positive(form, field):
    if field.data is not None and field.data <= 0:
        raise ValidationError('Must be positive.')


class TrainConfigForm(Form):
    """Train config form; absent keys take the TrainConfig defaults"""

    mode = SelectField('Mode', choices=[(m, m) for m in MODES], default='full')

    total_iters = IntegerField('Iterations', validators=[NumberRange(min=1)], default=6000)
    seg_lr = FloatField('Segmenter learning rate', validators=[_positive], default=0.01)
    seg_lr_decay = FloatField('Learning rate decay', validators=[NumberRange(min=0, max=1), _positive], default=0.1)
    lr_decay_every = IntegerField('Decay period', validators=[NumberRange(min=1)], default=2500)
    momentum = FloatField('Momentum', validators=[NumberRange(min=0, max=1)], default=0.9)
    weight_decay = FloatField('Weight decay', validators=[NumberRange(min=0)], default=1e-4)
    disc_lr = FloatField('Discriminator learning rate', validators=[_positive], default=1e-4)

    batch_size = IntegerField('Batch size', validators=[NumberRange(min=1)], default=4)
    labeled_per_batch = IntegerField('Labeled per batch', validators=[NumberRange(min=1)], default=2)
    alpha = FloatField('SDM loss weight', validators=[NumberRange(min=0)], default=0.3)
    beta_max = FloatField('Adversarial weight', validators=[NumberRange(min=0)], default=0.001)
    crop = FieldList(IntegerField('Crop size', validators=[NumberRange(min=1)]), default=lambda: [32, 32, 32])
    flip_prob = FloatField('Flip probability', validators=[NumberRange(min=0, max=1)], default=0.5)

    seed = IntegerField('Seed', validators=[NumberRange(min=0)], default=1337)
    checkpoint_every = IntegerField('Checkpoint period', validators=[NumberRange(min=1)], default=500)
    validate_every = IntegerField('Validation period', validators=[NumberRange(min=1)], default=200)
    max_checkpoints = IntegerField('Kept checkpoints', validators=[NumberRange(min=1)], default=3)
    threshold = FloatField('Threshold', validators=[NumberRange(min=0, max=1)], default=0.5)

    base_channels = IntegerField('Base channels', validators=[NumberRange(min=4)], default=8)
    levels = IntegerField('Levels', validators=[NumberRange(min=2, max=6)], default=3)
    norm = SelectField('Normalization', choices=[(n, n) for n in NORMS], default='instance')
    disc_channels = FieldList(IntegerField('Discriminator channels', validators=[NumberRange(min=1)]),
                              default=lambda: [16, 32, 64, 128, 256])
    mlp_hidden = IntegerField('Discriminator hidden units', validators=[NumberRange(min=1)], default=64)

    def validate_crop(self, field):
        if len(field.entries) != 3:
            raise ValidationError('Must list three sizes [d, h, w].')

    def validate_disc_channels(self, field):
        if len(field.entries) != 5:
            raise ValidationError('Must list five stage widths.')


def _first_message(errors):
    while isinstance(errors, (list, tuple)) and errors:
        errors = errors[0]
    if isinstance(errors, dict):
        return _first_message(next(iter(errors.values())))
    return str(errors)


def parse_train_config(data: dict, mode: str = None) -> TrainConfig:
    """
    Validate a train-config document and build the TrainConfig

    Args:
        data: Parsed JSON object
        mode: Mode override from the command line

    Raises:
        ConfigurationError: naming the first offending key
    """
    if not isinstance(data, dict):
        raise ConfigurationError('config', "train config must be a JSON object")
    data = dict(data)
    if mode is not None:
        data['mode'] = mode

    form = TrainConfigForm(data=data)
    unknown = sorted(set(data) - set(form._fields))
    if unknown:
        raise ConfigurationError(unknown[0], "unknown configuration key")
    if not form.validate():
        key = next(iter(form.errors))
        raise ConfigurationError(key, _first_message(form.errors[key]))

    return TrainConfig(**{name: field.data for name, field in form._fields.items()})
