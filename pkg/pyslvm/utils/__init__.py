from pyslvm.utils.losses import cosine_loss, fine_tune_loss, total_loss, LossBreakdown
